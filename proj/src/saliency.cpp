#include "xaibench/saliency.hpp"

#include <cmath>
#include <fstream>
#include <type_traits>

#include "xaibench/errors.hpp"
#include "xaibench/ten_io.hpp"

namespace xb::saliency {

using net::Matrix;
using net::Tensor;
using net::Vector;

namespace {

constexpr std::array<const char*, 8> kMethodNames = {
    "gradient",        "lrp_z",     "lrp_alpha_beta", "deep_taylor",
    "guided_backprop", "deconvnet", "pattern_net",    "pattern_attribution"};

/// z + eps * sign(z), with sign(0) = +1 so the result is never zero.
template <typename Scalar>
Matrix<Scalar> stabilize(const Matrix<Scalar>& z, double epsilon) {
  const auto e = static_cast<Scalar>(epsilon);
  return z.unaryExpr([e](Scalar v) { return v >= Scalar(0) ? v + e : v - e; });
}

template <typename Scalar>
Tensor<Scalar> like(const Tensor<Scalar>& shape, std::type_identity_t<Matrix<Scalar>> values) {
  return {shape.channels, shape.height, shape.width, std::move(values)};
}

/// Adds the bias as a per-channel (conv) or per-unit (dense) offset.
template <typename Scalar>
void add_bias(Tensor<Scalar>& z, const Vector<Scalar>& bias) {
  if (bias.size() == 0) return;
  if (bias.size() != z.channels) throw ShapeError("relevance rule: bias size mismatch");
  z.data.colwise() += bias;
}

template <typename Scalar>
bool all_nonnegative(const Tensor<Scalar>& a) {
  return a.size() == 0 || a.data.minCoeff() >= Scalar(0);
}

template <typename Scalar>
const Matrix<Scalar>& linear_weights(const net::Layer<Scalar>& layer) {
  if (const auto* c = std::get_if<net::Conv3x3<Scalar>>(&layer)) return c->weights;
  return std::get<net::Dense<Scalar>>(layer).weights;
}

template <typename Scalar>
const Vector<Scalar>& linear_bias(const net::Layer<Scalar>& layer) {
  if (const auto* c = std::get_if<net::Conv3x3<Scalar>>(&layer)) return c->bias;
  return std::get<net::Dense<Scalar>>(layer).bias;
}

}  // namespace

std::string to_string(Method m) { return kMethodNames.at(static_cast<std::size_t>(m)); }

Method method_from_string(const std::string& s) {
  for (std::size_t i = 0; i < kMethodNames.size(); ++i)
    if (s == kMethodNames[i]) return static_cast<Method>(i);
  throw ConfigError("unknown saliency method '" + s + "'");
}

bool starts_at_logit(Method m) {
  return m == Method::lrp_z || m == Method::lrp_alpha_beta || m == Method::deep_taylor ||
         m == Method::pattern_attribution;
}

bool needs_patterns(Method m) {
  return m == Method::pattern_net || m == Method::pattern_attribution;
}

void MethodSpec::validate() const {
  if (!(epsilon > 0)) throw ConfigError("method stabilizer epsilon must be positive");
  if (kind == Method::lrp_alpha_beta) {
    if (alpha < 0 || beta < 0) throw ConfigError("lrp_alpha_beta needs alpha, beta >= 0");
    if (std::abs(alpha - beta - 1.0) > 1e-12)
      throw ConfigError("lrp_alpha_beta needs alpha - beta = 1");
  }
  if (!(lower <= upper)) throw ConfigError("input bounds must satisfy lower <= upper");
}

// --- per-layer rules --------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> project(bool conv, const Matrix<Scalar>& weights, const Tensor<Scalar>& a) {
  if (conv) {
    if (a.channels * 9 != weights.cols()) throw ShapeError("conv projection: channel mismatch");
    Matrix<Scalar> z = weights * net::im2col3x3(a);
    return {static_cast<int>(weights.rows()), a.height, a.width, std::move(z)};
  }
  if (a.size() != weights.cols()) throw ShapeError("dense projection: size mismatch");
  const Eigen::Map<const Vector<Scalar>> v(a.data.data(), a.size());
  Matrix<Scalar> z(weights.rows(), 1);
  z.col(0).noalias() = weights * v;
  return {static_cast<int>(weights.rows()), 1, 1, std::move(z)};
}

template <typename Scalar>
Tensor<Scalar> backproject(bool conv, const Matrix<Scalar>& weights, const Tensor<Scalar>& s) {
  return conv ? net::conv3x3_transpose(weights, s) : net::dense_transpose(weights, s);
}

template <typename Scalar>
Tensor<Scalar> rule_gradient(const net::Layer<Scalar>& layer,
                             const net::ActivationRecord<Scalar>& record, std::size_t index,
                             const Tensor<Scalar>& g) {
  const auto& x = record.inputs.at(index);
  return std::visit(
      [&](const auto& l) -> Tensor<Scalar> {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, net::Conv3x3<Scalar>>) {
          return net::conv3x3_transpose(l.weights, g);
        } else if constexpr (std::is_same_v<L, net::Dense<Scalar>>) {
          return net::dense_transpose(l.weights, g);
        } else if constexpr (std::is_same_v<L, net::Relu>) {
          return net::relu_backward(x, g);
        } else if constexpr (std::is_same_v<L, net::MaxPool2x2>) {
          return net::maxpool2x2_backward<Scalar>(record.argmax.at(index), g, x.height,
                                                  x.width);
        } else {
          return net::unflatten(g, x.channels, x.height, x.width);
        }
      },
      layer);
}

template <typename Scalar>
Tensor<Scalar> rule_deconvnet(const Tensor<Scalar>& g) {
  return like(g, g.data.cwiseMax(Scalar(0)));
}

template <typename Scalar>
Tensor<Scalar> rule_guided_backprop(const Tensor<Scalar>& x, const Tensor<Scalar>& g) {
  if (!x.same_shape(g)) throw ShapeError("guided backprop: signal shape mismatch");
  Matrix<Scalar> out =
      (x.data.array() > Scalar(0) && g.data.array() > Scalar(0)).select(g.data, Scalar(0));
  return like(g, std::move(out));
}

template <typename Scalar>
Tensor<Scalar> rule_lrp_z(bool conv, const Matrix<Scalar>& weights, const Vector<Scalar>& bias,
                          const Tensor<Scalar>& a, const Tensor<Scalar>& relevance,
                          double epsilon) {
  Tensor<Scalar> z = project(conv, weights, a);
  add_bias(z, bias);
  if (z.size() != relevance.size()) throw ShapeError("lrp_z: relevance shape mismatch");
  const Tensor<Scalar> s =
      like(z, (relevance.data.reshaped(z.data.rows(), z.data.cols()).array() /
               stabilize(z.data, epsilon).array())
                  .matrix());
  const Tensor<Scalar> c = backproject(conv, weights, s);
  return like(a, (a.data.array() * c.data.reshaped(a.data.rows(), a.data.cols()).array()).matrix());
}

template <typename Scalar>
Tensor<Scalar> rule_lrp_alpha_beta(bool conv, const Matrix<Scalar>& weights,
                                   const Vector<Scalar>& bias, const Tensor<Scalar>& a,
                                   const Tensor<Scalar>& relevance, double alpha, double beta,
                                   double epsilon) {
  const Matrix<Scalar> wp = weights.cwiseMax(Scalar(0));
  const Matrix<Scalar> wn = weights.cwiseMin(Scalar(0));
  const Tensor<Scalar> ap = like(a, a.data.cwiseMax(Scalar(0)));
  const Tensor<Scalar> an = like(a, a.data.cwiseMin(Scalar(0)));
  // Activations after a ReLU are never negative; skip the a- terms then.
  const bool mixed = !all_nonnegative(a);
  const auto e = static_cast<Scalar>(epsilon);

  Tensor<Scalar> zp = project(conv, wp, ap);
  Tensor<Scalar> zn = project(conv, wn, ap);
  if (mixed) {
    zp.data += project(conv, wn, an).data;
    zn.data += project(conv, wp, an).data;
  }
  if (bias.size() > 0) {
    add_bias(zp, Vector<Scalar>(bias.cwiseMax(Scalar(0))));
    add_bias(zn, Vector<Scalar>(bias.cwiseMin(Scalar(0))));
  }
  if (zp.size() != relevance.size()) throw ShapeError("lrp_alpha_beta: relevance shape mismatch");
  const auto r = relevance.data.reshaped(zp.data.rows(), zp.data.cols()).array();
  // A side whose total is within epsilon of zero counts as empty; a neuron
  // with one nonempty side passes all of its relevance through it
  // (alpha - beta = 1), so no relevance leaks. Nonempty totals are divided
  // exactly: every ratio z_ij / Z lies in [0, 1] on its own side.
  const auto pos_empty = zp.data.array() <= e;
  const auto neg_empty = zn.data.array() >= -e;
  const auto one_sided_pos = neg_empty.template cast<Scalar>();
  const auto one_sided_neg = (pos_empty && !neg_empty).template cast<Scalar>();
  const auto two_sided = Scalar(1) - one_sided_pos - one_sided_neg;
  const auto ca = two_sided * static_cast<Scalar>(alpha) + one_sided_pos;
  const auto cb = two_sided * static_cast<Scalar>(beta) - one_sided_neg;
  const auto dp = pos_empty.select(zp.data.array() + e, zp.data.array());
  const auto dn = neg_empty.select(zn.data.array() - e, zn.data.array());
  const Tensor<Scalar> sp = like(zp, (ca * r / dp).matrix());
  const Tensor<Scalar> sn = like(zn, (cb * r / dn).matrix());
  const bool negative_side = beta != 0 || (one_sided_neg * r != Scalar(0)).any();

  const auto rows = a.data.rows();
  const auto cols = a.data.cols();
  auto back = [&](const Matrix<Scalar>& w, const Tensor<Scalar>& s) {
    return backproject(conv, w, s).data.reshaped(rows, cols).eval();
  };
  Matrix<Scalar> out = ap.data.cwiseProduct(back(wp, sp));
  if (negative_side) out -= ap.data.cwiseProduct(back(wn, sn));
  if (mixed) {
    out += an.data.cwiseProduct(back(wn, sp));
    if (negative_side) out -= an.data.cwiseProduct(back(wp, sn));
  }
  return like(a, std::move(out));
}

template <typename Scalar>
Tensor<Scalar> rule_deep_taylor(bool conv, const Matrix<Scalar>& weights,
                                const Vector<Scalar>& bias, const Tensor<Scalar>& a,
                                const Tensor<Scalar>& relevance, bool first_layer, double lower,
                                double upper, double epsilon) {
  if (!first_layer)
    return rule_lrp_alpha_beta(conv, weights, bias, a, relevance, 1.0, 0.0, epsilon);

  // z^B: contributions measured against the box corner that minimises z.
  const Matrix<Scalar> wp = weights.cwiseMax(Scalar(0));
  const Matrix<Scalar> wn = weights.cwiseMin(Scalar(0));
  const Tensor<Scalar> lo =
      like(a, Matrix<Scalar>::Constant(a.data.rows(), a.data.cols(), static_cast<Scalar>(lower)));
  const Tensor<Scalar> hi =
      like(a, Matrix<Scalar>::Constant(a.data.rows(), a.data.cols(), static_cast<Scalar>(upper)));
  Tensor<Scalar> z = project(conv, weights, a);
  z.data -= project(conv, wp, lo).data;
  z.data -= project(conv, wn, hi).data;
  if (z.size() != relevance.size()) throw ShapeError("deep_taylor: relevance shape mismatch");
  const Tensor<Scalar> s =
      like(z, (relevance.data.reshaped(z.data.rows(), z.data.cols()).array() /
               stabilize(z.data, epsilon).array())
                  .matrix());
  const auto rows = a.data.rows();
  const auto cols = a.data.cols();
  Matrix<Scalar> out =
      a.data.cwiseProduct(backproject(conv, weights, s).data.reshaped(rows, cols));
  out -= lo.data.cwiseProduct(backproject(conv, wp, s).data.reshaped(rows, cols));
  out -= hi.data.cwiseProduct(backproject(conv, wn, s).data.reshaped(rows, cols));
  return like(a, std::move(out));
}

template <typename Scalar>
Tensor<Scalar> rule_pattern_net(bool conv, const Matrix<Scalar>& pattern, const Tensor<Scalar>& g) {
  return backproject(conv, pattern, g);
}

template <typename Scalar>
Tensor<Scalar> rule_pattern_attribution(bool conv, const Matrix<Scalar>& weights,
                                        const Matrix<Scalar>& pattern, const Tensor<Scalar>& g) {
  if (weights.rows() != pattern.rows() || weights.cols() != pattern.cols())
    throw ShapeError("pattern attribution: pattern shape differs from weights");
  return backproject(conv, Matrix<Scalar>(weights.cwiseProduct(pattern)), g);
}

// --- model-level ------------------------------------------------------------

template <typename Scalar>
std::vector<Tensor<Scalar>> explain_layers(const net::Model<Scalar>& model,
                                           const net::ActivationRecord<Scalar>& record,
                                           const MethodSpec& method, int target_class,
                                           const PatternSet<Scalar>* patterns) {
  method.validate();
  const auto n = model.layers.size();
  if (record.size() != n || n == 0) throw ShapeError("activation record does not match model");
  const Tensor<Scalar>& logits = record.outputs.back();
  if (target_class < 0 || target_class >= logits.size())
    throw ConfigError("target class " + std::to_string(target_class) + " out of range");
  if (needs_patterns(method.kind)) {
    if (patterns == nullptr) throw UnsupportedError(to_string(method.kind) + " needs a pattern set");
    for (std::size_t l = 0; l < n; ++l)
      if (net::is_linear(model.layers[l]) && !patterns->has(l))
        throw UnsupportedError("pattern set has no entry for layer " + std::to_string(l));
  }

  std::size_t first_linear = n;
  for (std::size_t l = 0; l < n && first_linear == n; ++l)
    if (net::is_linear(model.layers[l])) first_linear = l;

  Tensor<Scalar> g(logits.channels, logits.height, logits.width);
  g.data(target_class) =
      starts_at_logit(method.kind) ? logits.data(target_class) : Scalar(1);

  std::vector<Tensor<Scalar>> signals(n + 1);
  signals[n] = g;
  for (std::size_t i = n; i-- > 0;) {
    const auto& layer = model.layers[i];
    const auto& x = record.inputs[i];
    const auto kind = net::kind_of(layer);
    if (net::is_linear(layer)) {
      const bool conv = kind == net::LayerKind::conv3x3;
      const auto& w = linear_weights(layer);
      const auto& b = linear_bias(layer);
      switch (method.kind) {
        case Method::gradient:
        case Method::guided_backprop:
        case Method::deconvnet:
          g = backproject(conv, w, g);
          break;
        case Method::lrp_z:
          g = rule_lrp_z(conv, w, b, x, g, method.epsilon);
          break;
        case Method::lrp_alpha_beta:
          g = rule_lrp_alpha_beta(conv, w, b, x, g, method.alpha, method.beta, method.epsilon);
          break;
        case Method::deep_taylor:
          g = rule_deep_taylor(conv, w, b, x, g, i == first_linear, method.lower, method.upper,
                               method.epsilon);
          break;
        case Method::pattern_net:
          g = rule_pattern_net(conv, patterns->patterns[i], g);
          break;
        case Method::pattern_attribution:
          g = rule_pattern_attribution(conv, w, patterns->patterns[i], g);
          break;
      }
      if (!conv) g = like(x, std::move(g.data).reshaped(x.data.rows(), x.data.cols()).eval());
    } else if (kind == net::LayerKind::relu) {
      switch (method.kind) {
        case Method::guided_backprop: g = rule_guided_backprop(x, g); break;
        case Method::deconvnet: g = rule_deconvnet(g); break;
        case Method::lrp_z:
        case Method::lrp_alpha_beta:
        case Method::deep_taylor: break;  // relevance passes through unchanged
        default: g = net::relu_backward(x, g); break;
      }
    } else {
      g = rule_gradient(layer, record, i, g);
    }
    signals[i] = g;
  }
  return signals;
}

template <typename Scalar>
Heatmap<Scalar> explain(const net::Model<Scalar>& model,
                        const net::ActivationRecord<Scalar>& record, const MethodSpec& method,
                        int target_class, const PatternSet<Scalar>* patterns) {
  const auto signals = explain_layers(model, record, method, target_class, patterns);
  const Tensor<Scalar>& in = signals.front();
  Heatmap<Scalar> h;
  h.method = method.kind;
  h.target_class = target_class;
  if (in.height == 1 && in.width == 1) {
    h.relevance = in.data.transpose();
  } else {
    const Vector<Scalar> summed = in.data.colwise().sum().transpose();
    h.relevance = summed.template reshaped<Eigen::RowMajor>(in.height, in.width);
  }
  if (!h.relevance.allFinite())
    throw NumericError(to_string(method.kind) + " produced a non-finite heatmap");
  return h;
}

// --- pattern estimation -----------------------------------------------------

namespace {

struct LayerMoments {
  bool positive = false;  // followed by a ReLU
  double count = 0;
  Eigen::VectorXd sum_x;
  Eigen::VectorXd sum_y;
  Eigen::MatrixXd sum_xy;
  Eigen::VectorXd pos_count;
  Eigen::VectorXd pos_y;
  Eigen::MatrixXd pos_x;
  Eigen::MatrixXd pos_xy;
};

/// a = c / (w^T c); returns false when w^T c is (numerically) zero.
bool normalize_pattern(const Eigen::VectorXd& w, const Eigen::VectorXd& c, Eigen::VectorXd& a) {
  const double d = w.dot(c);
  if (!std::isfinite(d) || std::abs(d) <= 1e-12 * w.norm() * c.norm() || c.norm() == 0)
    return false;
  a = c / d;
  return true;
}

}  // namespace

template <typename Scalar>
PatternSet<Scalar> estimate_patterns(const net::Model<Scalar>& model,
                                     const InputProvider<Scalar>& inputs, std::size_t count) {
  if (count == 0) throw ConfigError("pattern estimation needs at least one sample");
  const auto n = model.layers.size();
  std::vector<LayerMoments> mom(n);
  for (std::size_t l = 0; l < n; ++l) {
    if (!net::is_linear(model.layers[l])) continue;
    const auto& w = linear_weights(model.layers[l]);
    auto& m = mom[l];
    m.positive = l + 1 < n && net::kind_of(model.layers[l + 1]) == net::LayerKind::relu;
    m.sum_x = Eigen::VectorXd::Zero(w.cols());
    m.sum_y = Eigen::VectorXd::Zero(w.rows());
    m.sum_xy = Eigen::MatrixXd::Zero(w.rows(), w.cols());
    if (m.positive) {
      m.pos_count = Eigen::VectorXd::Zero(w.rows());
      m.pos_y = Eigen::VectorXd::Zero(w.rows());
      m.pos_x = Eigen::MatrixXd::Zero(w.rows(), w.cols());
      m.pos_xy = Eigen::MatrixXd::Zero(w.rows(), w.cols());
    }
  }

  for (std::size_t k = 0; k < count; ++k) {
    const auto fwd = net::forward(model, inputs(k));
    for (std::size_t l = 0; l < n; ++l) {
      if (!net::is_linear(model.layers[l])) continue;
      auto& m = mom[l];
      const auto& in = fwd.record.inputs[l];
      // x: one column per spatial position (conv) or a single column (dense).
      const Matrix<Scalar> x =
          net::kind_of(model.layers[l]) == net::LayerKind::conv3x3
              ? net::im2col3x3(in)
              : Matrix<Scalar>(in.data.reshaped(in.size(), 1));
      const auto& y = fwd.record.outputs[l].data;
      const auto yx = y.reshaped(linear_weights(model.layers[l]).rows(), x.cols());
      m.count += static_cast<double>(x.cols());
      m.sum_x += x.rowwise().sum().template cast<double>();
      m.sum_y += yx.rowwise().sum().template cast<double>();
      m.sum_xy += (yx * x.transpose()).template cast<double>();
      if (m.positive) {
        const Matrix<Scalar> mask = (yx.array() > Scalar(0)).template cast<Scalar>();
        const Matrix<Scalar> ym = yx.cwiseProduct(mask);
        m.pos_count += mask.rowwise().sum().template cast<double>();
        m.pos_y += ym.rowwise().sum().template cast<double>();
        m.pos_x += (mask * x.transpose()).template cast<double>();
        m.pos_xy += (ym * x.transpose()).template cast<double>();
      }
    }
  }

  PatternSet<Scalar> set;
  set.patterns.resize(n);
  set.stats = {{"samples", count}, {"estimator", "positive"}, {"layers", nlohmann::json::array()},
               {"warnings", nlohmann::json::array()}};
  for (std::size_t l = 0; l < n; ++l) {
    if (!net::is_linear(model.layers[l])) continue;
    const Eigen::MatrixXd w = linear_weights(model.layers[l]).template cast<double>();
    const auto& m = mom[l];
    Eigen::MatrixXd a(w.rows(), w.cols());
    std::vector<int> inactive, degenerate, unresolved;
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      const Eigen::VectorXd wi = w.row(i).transpose();
      Eigen::VectorXd ai;
      bool done = false;
      if (m.positive) {
        const double np = m.pos_count(i);
        if (np > 0) {
          const Eigen::VectorXd c =
              m.pos_xy.row(i).transpose() / np -
              (m.pos_x.row(i).transpose() / np) * (m.pos_y(i) / np);
          done = normalize_pattern(wi, c, ai);
          if (!done) degenerate.push_back(static_cast<int>(i));
        } else {
          inactive.push_back(static_cast<int>(i));
        }
      }
      if (!done) {
        const Eigen::VectorXd c =
            m.sum_xy.row(i).transpose() / m.count - (m.sum_x / m.count) * (m.sum_y(i) / m.count);
        done = normalize_pattern(wi, c, ai);
      }
      if (!done) {
        // No usable covariance at all: the weight direction itself.
        unresolved.push_back(static_cast<int>(i));
        const double ww = wi.squaredNorm();
        ai = ww > 0 ? Eigen::VectorXd(wi / ww) : Eigen::VectorXd::Zero(wi.size());
      }
      a.row(i) = ai.transpose();
    }
    set.patterns[l] = a.cast<Scalar>();

    nlohmann::json entry{{"layer", l},
                         {"kind", net::to_string(net::kind_of(model.layers[l]))},
                         {"regime", m.positive ? "positive" : "linear"},
                         {"neurons", w.rows()},
                         {"never_active", inactive},
                         {"degenerate", degenerate},
                         {"weight_direction", unresolved}};
    set.stats["layers"].push_back(entry);
    auto warn = [&](const std::vector<int>& ids, const std::string& what) {
      if (!ids.empty())
        set.stats["warnings"].push_back("layer " + std::to_string(l) + ": " +
                                        std::to_string(ids.size()) + " neuron(s) " + what);
    };
    warn(inactive, "never active, used the linear estimator");
    warn(degenerate, "with degenerate w^T c, used the linear estimator");
    warn(unresolved, "without usable covariance, used w / |w|^2");
  }
  return set;
}

void save_patterns(const std::filesystem::path& path, const PatternSet<float>& patterns) {
  nlohmann::json header{{"format_version", 1},
                        {"layers", nlohmann::json::array()},
                        {"stats", patterns.stats}};
  for (std::size_t l = 0; l < patterns.patterns.size(); ++l)
    if (patterns.has(l)) header["layers"].push_back(l);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << header.dump() << '\n';
  for (std::size_t l = 0; l < patterns.patterns.size(); ++l) {
    if (!patterns.has(l)) continue;
    const auto& p = patterns.patterns[l];
    const std::uint32_t dims[] = {static_cast<std::uint32_t>(p.rows()),
                                  static_cast<std::uint32_t>(p.cols())};
    write_ten(out, dims, std::span<const float>(p.data(), static_cast<std::size_t>(p.size())));
  }
  if (!out) throw IoError("failed writing patterns " + path.string());
}

PatternSet<float> load_patterns(const std::filesystem::path& path,
                                const net::Model<float>& model) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open pattern file " + path.string());
  std::string line;
  std::getline(in, line);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed pattern header in " + path.string() + ": " + e.what());
  }
  if (header.value("format_version", 0) != 1)
    throw IoError("unsupported pattern file version in " + path.string());

  PatternSet<float> set;
  set.patterns.resize(model.layers.size());
  set.stats = header.value("stats", nlohmann::json::object());
  for (const auto& jl : header.at("layers")) {
    const auto l = jl.get<std::size_t>();
    if (l >= model.layers.size() || !net::is_linear(model.layers[l]))
      throw IoError("pattern file refers to a non-linear layer " + std::to_string(l));
    const auto& w = linear_weights(model.layers[l]);
    TenHeader h;
    const std::vector<float> v = read_ten_f32(in, &h);
    if (h.dims.size() != 2 || h.dims[0] != w.rows() || h.dims[1] != w.cols())
      throw IoError("pattern for layer " + std::to_string(l) + " does not match the model");
    set.patterns[l] = Eigen::Map<const Matrix<float>>(v.data(), w.rows(), w.cols());
  }
  return set;
}

#define XB_INSTANTIATE(S)                                                                  \
  template Tensor<S> project<S>(bool, const Matrix<S>&, const Tensor<S>&);                 \
  template Tensor<S> backproject<S>(bool, const Matrix<S>&, const Tensor<S>&);             \
  template Tensor<S> rule_gradient<S>(const net::Layer<S>&, const net::ActivationRecord<S>&, \
                                      std::size_t, const Tensor<S>&);                      \
  template Tensor<S> rule_deconvnet<S>(const Tensor<S>&);                                  \
  template Tensor<S> rule_guided_backprop<S>(const Tensor<S>&, const Tensor<S>&);          \
  template Tensor<S> rule_lrp_z<S>(bool, const Matrix<S>&, const Vector<S>&,               \
                                   const Tensor<S>&, const Tensor<S>&, double);            \
  template Tensor<S> rule_lrp_alpha_beta<S>(bool, const Matrix<S>&, const Vector<S>&,      \
                                            const Tensor<S>&, const Tensor<S>&, double,    \
                                            double, double);                               \
  template Tensor<S> rule_deep_taylor<S>(bool, const Matrix<S>&, const Vector<S>&,         \
                                         const Tensor<S>&, const Tensor<S>&, bool, double, \
                                         double, double);                                  \
  template Tensor<S> rule_pattern_net<S>(bool, const Matrix<S>&, const Tensor<S>&);        \
  template Tensor<S> rule_pattern_attribution<S>(bool, const Matrix<S>&, const Matrix<S>&, \
                                                 const Tensor<S>&);                        \
  template std::vector<Tensor<S>> explain_layers<S>(const net::Model<S>&,                  \
                                                    const net::ActivationRecord<S>&,       \
                                                    const MethodSpec&, int,                \
                                                    const PatternSet<S>*);                 \
  template Heatmap<S> explain<S>(const net::Model<S>&, const net::ActivationRecord<S>&,    \
                                 const MethodSpec&, int, const PatternSet<S>*);            \
  template PatternSet<S> estimate_patterns<S>(const net::Model<S>&,                        \
                                              const InputProvider<S>&, std::size_t);

XB_INSTANTIATE(float)
XB_INSTANTIATE(double)

#undef XB_INSTANTIATE

}  // namespace xb::saliency
