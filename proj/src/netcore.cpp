#include "xaibench/netcore.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "xaibench/errors.hpp"
#include "xaibench/rng.hpp"
#include "xaibench/ten_io.hpp"

namespace xb::net {

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv3x3: return "conv3x3";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool2x2: return "maxpool2x2";
    case LayerKind::flatten: return "flatten";
    case LayerKind::dense: return "dense";
  }
  return "?";
}

// --- architecture -----------------------------------------------------------

Architecture Architecture::paper() {
  Architecture a;
  a.input = {1, 140, 192};
  a.block_filters = {32, 64, 128, 256};
  return a;
}

Architecture Architecture::desk() {
  Architecture a;
  a.input = {1, 64, 64};
  a.block_filters = {32, 64};
  return a;
}

InputShape Architecture::feature_shape() const {
  InputShape s = input;
  for (int filters : block_filters) {
    s.channels = filters;
    s.height /= 2;
    s.width /= 2;
  }
  return s;
}

int Architecture::flatten_width() const {
  const InputShape s = feature_shape();
  return s.channels * s.height * s.width;
}

void to_json(nlohmann::json& j, const Architecture& a) {
  j = nlohmann::json{{"input", {a.input.channels, a.input.height, a.input.width}},
                     {"block_filters", a.block_filters},
                     {"dense_units", a.dense_units},
                     {"classes", a.classes}};
}

void from_json(const nlohmann::json& j, Architecture& a) {
  a.input = {j.at("input").at(0).get<int>(), j.at("input").at(1).get<int>(),
             j.at("input").at(2).get<int>()};
  a.block_filters = j.at("block_filters").get<std::vector<int>>();
  a.dense_units = j.at("dense_units").get<int>();
  a.classes = j.at("classes").get<int>();
}

// --- model ------------------------------------------------------------------

template <typename Scalar>
template <typename Other>
Model<Other> Model<Scalar>::cast() const {
  Model<Other> m;
  m.arch = arch;
  m.seed = seed;
  m.init_scheme = init_scheme;
  m.trained_epochs = trained_epochs;
  for (const auto& layer : layers) {
    std::visit(
        [&](const auto& l) {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, Conv3x3<Scalar>>) {
            m.layers.push_back(Conv3x3<Other>{l.weights.template cast<Other>(),
                                              l.bias.template cast<Other>()});
          } else if constexpr (std::is_same_v<L, Dense<Scalar>>) {
            m.layers.push_back(Dense<Other>{l.weights.template cast<Other>(),
                                            l.bias.template cast<Other>()});
          } else {
            m.layers.push_back(l);
          }
        },
        layer);
  }
  return m;
}

template <typename Scalar>
std::vector<int> Model<Scalar>::linear_layers() const {
  std::vector<int> out;
  for (std::size_t l = 0; l < layers.size(); ++l)
    if (is_linear(layers[l])) out.push_back(static_cast<int>(l));
  return out;
}

template <typename Scalar>
std::size_t Model<Scalar>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers) {
    if (const auto* c = std::get_if<Conv3x3<Scalar>>(&layer))
      n += static_cast<std::size_t>(c->weights.size() + c->bias.size());
    if (const auto* d = std::get_if<Dense<Scalar>>(&layer))
      n += static_cast<std::size_t>(d->weights.size() + d->bias.size());
  }
  return n;
}

template <typename Scalar>
Matrix<Scalar> he_init(int rows, int cols, int fan_in, std::uint64_t seed) {
  if (fan_in <= 0) throw ConfigError("He initialization needs fan_in > 0");
  const double stddev = std::sqrt(2.0 / fan_in);
  Rng rng(seed);
  Matrix<Scalar> w(rows, cols);
  for (Eigen::Index i = 0; i < w.size(); ++i)
    w.data()[i] = static_cast<Scalar>(stddev * rng.normal());
  return w;
}

template <typename Scalar>
Model<Scalar> build_model(const Architecture& arch, std::uint64_t seed) {
  if (arch.input.channels < 1 || arch.input.height < 1 || arch.input.width < 1)
    throw ConfigError("model input extents must be positive");
  if (arch.dense_units < 1 || arch.classes < 2)
    throw ConfigError("dense units must be positive and classes >= 2");
  Model<Scalar> m;
  m.arch = arch;
  m.seed = seed;
  int channels = arch.input.channels;
  int h = arch.input.height, w = arch.input.width;
  auto layer_seed = [&] { return derive_seed(seed, m.layers.size()); };
  auto add_conv = [&](int out) {
    Conv3x3<Scalar> c;
    c.weights = he_init<Scalar>(out, channels * 9, channels * 9, layer_seed());
    c.bias = Vector<Scalar>::Zero(out);
    m.layers.push_back(std::move(c));
    channels = out;
  };
  for (int filters : arch.block_filters) {
    if (filters < 1) throw ConfigError("block filter counts must be positive");
    add_conv(filters);
    m.layers.push_back(Relu{});
    add_conv(filters);
    m.layers.push_back(Relu{});
    m.layers.push_back(MaxPool2x2{});
    h /= 2;
    w /= 2;
    if (h < 1 || w < 1)
      throw ConfigError("input too small for " +
                        std::to_string(arch.block_filters.size()) + " pooling stages");
  }
  m.layers.push_back(Flatten{});
  const int flat = channels * h * w;
  Dense<Scalar> hidden{he_init<Scalar>(arch.dense_units, flat, flat, layer_seed()),
                       Vector<Scalar>::Zero(arch.dense_units)};
  m.layers.push_back(std::move(hidden));
  m.layers.push_back(Relu{});
  Dense<Scalar> head{
      he_init<Scalar>(arch.classes, arch.dense_units, arch.dense_units, layer_seed()),
      Vector<Scalar>::Zero(arch.classes)};
  m.layers.push_back(std::move(head));
  return m;
}

// --- convolution ------------------------------------------------------------

template <typename Scalar>
Matrix<Scalar> im2col3x3(const Tensor<Scalar>& x) {
  const int C = x.channels, H = x.height, W = x.width, HW = H * W;
  Matrix<Scalar> cols(static_cast<Eigen::Index>(C) * 9, HW);
  for (int c = 0; c < C; ++c) {
    const Scalar* src = x.data.data() + static_cast<std::size_t>(c) * HW;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        Scalar* dst = cols.data() + static_cast<std::size_t>(c * 9 + ky * 3 + kx) * HW;
        const int dy = ky - 1, dx = kx - 1;
        for (int y = 0; y < H; ++y) {
          Scalar* drow = dst + static_cast<std::size_t>(y) * W;
          const int sy = y + dy;
          if (sy < 0 || sy >= H) {
            std::fill(drow, drow + W, Scalar(0));
            continue;
          }
          const Scalar* srow = src + static_cast<std::size_t>(sy) * W;
          if (dx == 0) {
            std::copy(srow, srow + W, drow);
          } else if (dx < 0) {
            drow[0] = Scalar(0);
            std::copy(srow, srow + W - 1, drow + 1);
          } else {
            std::copy(srow + 1, srow + W, drow);
            drow[W - 1] = Scalar(0);
          }
        }
      }
    }
  }
  return cols;
}

template <typename Scalar>
Tensor<Scalar> col2im3x3(const Matrix<Scalar>& cols, int channels, int height,
                         int width) {
  const int HW = height * width;
  if (cols.rows() != static_cast<Eigen::Index>(channels) * 9 || cols.cols() != HW)
    throw ShapeError("col2im: column matrix does not match extents");
  Tensor<Scalar> out(channels, height, width);
  for (int c = 0; c < channels; ++c) {
    Scalar* dst = out.data.data() + static_cast<std::size_t>(c) * HW;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const Scalar* src =
            cols.data() + static_cast<std::size_t>(c * 9 + ky * 3 + kx) * HW;
        const int dy = ky - 1, dx = kx - 1;
        for (int y = 0; y < height; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= height) continue;
          const Scalar* crow = src + static_cast<std::size_t>(y) * width;
          Scalar* orow = dst + static_cast<std::size_t>(sy) * width;
          const int x0 = std::max(0, -dx), x1 = std::min(width, width - dx);
          for (int xx = x0; xx < x1; ++xx) orow[xx + dx] += crow[xx];
        }
      }
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> conv3x3_forward(const Tensor<Scalar>& x, const Matrix<Scalar>& weights,
                               const Vector<Scalar>& bias) {
  if (weights.cols() != static_cast<Eigen::Index>(x.channels) * 9)
    throw ShapeError("conv3x3: kernel expects " + std::to_string(weights.cols() / 9) +
                     " input channels, got " + std::to_string(x.channels));
  if (bias.size() != 0 && bias.size() != weights.rows())
    throw ShapeError("conv3x3: bias length does not match output channels");
  const Matrix<Scalar> cols = im2col3x3(x);
  Tensor<Scalar> out;
  out.channels = static_cast<int>(weights.rows());
  out.height = x.height;
  out.width = x.width;
  out.data.noalias() = weights * cols;
  if (bias.size() != 0) out.data.colwise() += bias;
  return out;
}

template <typename Scalar>
Tensor<Scalar> conv3x3_transpose(const Matrix<Scalar>& weights, const Tensor<Scalar>& g) {
  if (g.channels != weights.rows())
    throw ShapeError("conv3x3 transpose: signal channels do not match kernel");
  const Matrix<Scalar> dcols = weights.transpose() * g.data;
  return col2im3x3(dcols, static_cast<int>(weights.cols() / 9), g.height, g.width);
}

template <typename Scalar>
ParamGrads<Scalar> conv3x3_backward(const Tensor<Scalar>& x, const Matrix<Scalar>& weights,
                                    const Tensor<Scalar>& g, bool need_input) {
  if (g.channels != weights.rows() || g.height != x.height || g.width != x.width)
    throw ShapeError("conv3x3 backward: upstream gradient shape mismatch");
  ParamGrads<Scalar> out;
  const Matrix<Scalar> cols = im2col3x3(x);
  out.weights.noalias() = g.data * cols.transpose();
  out.bias = g.data.rowwise().sum();
  if (need_input) out.input = conv3x3_transpose(weights, g);
  return out;
}

// --- relu / pool / flatten --------------------------------------------------

template <typename Scalar>
Tensor<Scalar> relu_forward(const Tensor<Scalar>& x) {
  return {x.channels, x.height, x.width, x.data.cwiseMax(Scalar(0))};
}

template <typename Scalar>
Tensor<Scalar> relu_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& g) {
  if (!x.same_shape(g)) throw ShapeError("relu backward: shape mismatch");
  return {g.channels, g.height, g.width,
          (x.data.array() > Scalar(0)).select(g.data, Scalar(0))};
}

template <typename Scalar>
PoolResult<Scalar> maxpool2x2_forward(const Tensor<Scalar>& x) {
  const int oh = x.height / 2, ow = x.width / 2;
  if (oh < 1 || ow < 1) throw ShapeError("maxpool2x2: input smaller than 2 x 2");
  PoolResult<Scalar> r;
  r.output = Tensor<Scalar>(x.channels, oh, ow);
  r.argmax.resize(static_cast<std::size_t>(x.channels) * oh * ow);
  for (int c = 0; c < x.channels; ++c) {
    const Scalar* src = x.data.data() + static_cast<std::size_t>(c) * x.height * x.width;
    Scalar* dst = r.output.data.data() + static_cast<std::size_t>(c) * oh * ow;
    int* arg = r.argmax.data() + static_cast<std::size_t>(c) * oh * ow;
    for (int y = 0; y < oh; ++y) {
      for (int xx = 0; xx < ow; ++xx) {
        int best = (2 * y) * x.width + 2 * xx;
        const int candidates[3] = {best + 1, best + x.width, best + x.width + 1};
        for (int idx : candidates)
          if (src[idx] > src[best]) best = idx;
        dst[y * ow + xx] = src[best];
        arg[y * ow + xx] = best;
      }
    }
  }
  return r;
}

template <typename Scalar>
Tensor<Scalar> maxpool2x2_backward(std::span<const int> argmax, const Tensor<Scalar>& g,
                                   int in_height, int in_width) {
  if (argmax.size() != static_cast<std::size_t>(g.size()))
    throw ShapeError("maxpool2x2 backward: routing table does not match signal");
  Tensor<Scalar> out(g.channels, in_height, in_width);
  const int per_out = g.height * g.width;
  const int per_in = in_height * in_width;
  for (int c = 0; c < g.channels; ++c) {
    const Scalar* src = g.data.data() + static_cast<std::size_t>(c) * per_out;
    Scalar* dst = out.data.data() + static_cast<std::size_t>(c) * per_in;
    const int* arg = argmax.data() + static_cast<std::size_t>(c) * per_out;
    for (int i = 0; i < per_out; ++i) dst[arg[i]] += src[i];
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> flatten(const Tensor<Scalar>& x) {
  Matrix<Scalar> flat =
      Eigen::Map<const Matrix<Scalar>>(x.data.data(), x.data.size(), 1);
  return {static_cast<int>(x.data.size()), 1, 1, std::move(flat)};
}

template <typename Scalar>
Tensor<Scalar> unflatten(const Tensor<Scalar>& g, int channels, int height, int width) {
  if (g.size() != static_cast<Eigen::Index>(channels) * height * width)
    throw ShapeError("unflatten: element count mismatch");
  Matrix<Scalar> m = Eigen::Map<const Matrix<Scalar>>(g.data.data(), channels,
                                                      static_cast<Eigen::Index>(height) * width);
  return {channels, height, width, std::move(m)};
}

// --- dense ------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> dense_forward(const Tensor<Scalar>& x, const Matrix<Scalar>& weights,
                             const Vector<Scalar>& bias) {
  if (weights.cols() != x.size())
    throw ShapeError("dense: expects " + std::to_string(weights.cols()) +
                     " inputs, got " + std::to_string(x.size()));
  if (bias.size() != 0 && bias.size() != weights.rows())
    throw ShapeError("dense: bias length does not match outputs");
  const Eigen::Map<const Vector<Scalar>> v(x.data.data(), x.size());
  Matrix<Scalar> y(weights.rows(), 1);
  y.col(0).noalias() = weights * v;
  if (bias.size() != 0) y.col(0) += bias;
  return {static_cast<int>(weights.rows()), 1, 1, std::move(y)};
}

template <typename Scalar>
Tensor<Scalar> dense_transpose(const Matrix<Scalar>& weights, const Tensor<Scalar>& g) {
  if (g.size() != weights.rows()) throw ShapeError("dense transpose: shape mismatch");
  const Eigen::Map<const Vector<Scalar>> v(g.data.data(), g.size());
  Matrix<Scalar> x(weights.cols(), 1);
  x.col(0).noalias() = weights.transpose() * v;
  return {static_cast<int>(weights.cols()), 1, 1, std::move(x)};
}

template <typename Scalar>
ParamGrads<Scalar> dense_backward(const Tensor<Scalar>& x, const Matrix<Scalar>& weights,
                                  const Tensor<Scalar>& g, bool need_input) {
  if (g.size() != weights.rows() || x.size() != weights.cols())
    throw ShapeError("dense backward: shape mismatch");
  const Eigen::Map<const Vector<Scalar>> xv(x.data.data(), x.size());
  const Eigen::Map<const Vector<Scalar>> gv(g.data.data(), g.size());
  ParamGrads<Scalar> out;
  out.weights.noalias() = gv * xv.transpose();
  out.bias = gv;
  if (need_input) out.input = dense_transpose(weights, g);
  return out;
}

template <typename Scalar>
LossResult<Scalar> softmax_xent(const Vector<Scalar>& logits, int label) {
  if (label < 0 || label >= logits.size())
    throw ConfigError("label index out of range for softmax");
  Eigen::Index top = 0;
  logits.maxCoeff(&top);
  const Scalar m = logits(top);
  Vector<Scalar> e = (logits.array() - m).exp().matrix();
  // Sum of the non-maximal terms, so log1p keeps precision near zero loss.
  Scalar rest = 0;
  for (Eigen::Index k = 0; k < e.size(); ++k)
    if (k != top) rest += e(k);
  LossResult<Scalar> r;
  r.probabilities = e / (Scalar(1) + rest);
  r.loss = std::log1p(rest) - (logits(label) - m);
  r.logit_grad = r.probabilities;
  r.logit_grad(label) -= Scalar(1);
  return r;
}

// --- passes -----------------------------------------------------------------

namespace {

template <typename Scalar>
void check_finite(const Tensor<Scalar>& t, std::size_t layer, LayerKind kind) {
  if (!t.data.allFinite())
    throw NumericError("non-finite values after layer " + std::to_string(layer) +
                       " (" + to_string(kind) + ")");
}

template <typename Scalar>
void check_input(const Model<Scalar>& model, const Tensor<Scalar>& x) {
  const auto& in = model.arch.input;
  if (x.channels != in.channels || x.height != in.height || x.width != in.width)
    throw ShapeError("input " + std::to_string(x.channels) + "x" +
                     std::to_string(x.height) + "x" + std::to_string(x.width) +
                     " does not match model input " + std::to_string(in.channels) +
                     "x" + std::to_string(in.height) + "x" + std::to_string(in.width));
}

template <typename Scalar>
Tensor<Scalar> apply_layer(const Layer<Scalar>& layer, const Tensor<Scalar>& x,
                           std::vector<int>* argmax) {
  return std::visit(
      [&](const auto& l) -> Tensor<Scalar> {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, Conv3x3<Scalar>>) {
          return conv3x3_forward(x, l.weights, l.bias);
        } else if constexpr (std::is_same_v<L, Dense<Scalar>>) {
          return dense_forward(x, l.weights, l.bias);
        } else if constexpr (std::is_same_v<L, Relu>) {
          return relu_forward(x);
        } else if constexpr (std::is_same_v<L, MaxPool2x2>) {
          auto r = maxpool2x2_forward(x);
          if (argmax) *argmax = std::move(r.argmax);
          return std::move(r.output);
        } else {
          return flatten(x);
        }
      },
      layer);
}

template <typename Scalar>
Vector<Scalar> logits_of(const Tensor<Scalar>& t) {
  return Eigen::Map<const Vector<Scalar>>(t.data.data(), t.size());
}

}  // namespace

template <typename Scalar>
ForwardResult<Scalar> forward(const Model<Scalar>& model, const Tensor<Scalar>& x) {
  check_input(model, x);
  ForwardResult<Scalar> r;
  auto& rec = r.record;
  const auto n = model.layers.size();
  rec.inputs.reserve(n);
  rec.outputs.reserve(n);
  rec.argmax.resize(n);
  Tensor<Scalar> cur = x;
  for (std::size_t l = 0; l < n; ++l) {
    Tensor<Scalar> out = apply_layer(model.layers[l], cur, &rec.argmax[l]);
    check_finite(out, l, kind_of(model.layers[l]));
    rec.inputs.push_back(std::move(cur));
    rec.outputs.push_back(out);
    cur = std::move(out);
  }
  r.logits = logits_of(cur);
  return r;
}

template <typename Scalar>
Vector<Scalar> infer(const Model<Scalar>& model, const Tensor<Scalar>& x) {
  check_input(model, x);
  Tensor<Scalar> cur = x;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    cur = apply_layer(model.layers[l], cur, nullptr);
    check_finite(cur, l, kind_of(model.layers[l]));
  }
  return logits_of(cur);
}

template <typename Scalar>
std::vector<ForwardResult<Scalar>> forward(const Model<Scalar>& model,
                                           std::span<const Tensor<Scalar>> batch) {
  std::vector<ForwardResult<Scalar>> out;
  out.reserve(batch.size());
  for (const auto& x : batch) out.push_back(forward(model, x));
  return out;
}

template <typename Scalar>
int argmax_class(const Vector<Scalar>& logits) {
  int best = 0;
  for (int k = 1; k < logits.size(); ++k)
    if (logits(k) > logits(best)) best = k;
  return best;
}

template <typename Scalar>
std::vector<int> predict(const Model<Scalar>& model, std::span<const Tensor<Scalar>> batch) {
  std::vector<int> out;
  out.reserve(batch.size());
  for (const auto& x : batch) out.push_back(argmax_class(infer(model, x)));
  return out;
}

template <typename Scalar>
Gradients<Scalar> Gradients<Scalar>::zeros_like(const Model<Scalar>& model) {
  Gradients g;
  g.weights.resize(model.layers.size());
  g.bias.resize(model.layers.size());
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    if (const auto* c = std::get_if<Conv3x3<Scalar>>(&model.layers[l])) {
      g.weights[l] = Matrix<Scalar>::Zero(c->weights.rows(), c->weights.cols());
      g.bias[l] = Vector<Scalar>::Zero(c->bias.size());
    } else if (const auto* d = std::get_if<Dense<Scalar>>(&model.layers[l])) {
      g.weights[l] = Matrix<Scalar>::Zero(d->weights.rows(), d->weights.cols());
      g.bias[l] = Vector<Scalar>::Zero(d->bias.size());
    }
  }
  return g;
}

template <typename Scalar>
Gradients<Scalar>& Gradients<Scalar>::operator+=(const Gradients& other) {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    weights[l] += other.weights[l];
    bias[l] += other.bias[l];
  }
  return *this;
}

template <typename Scalar>
Gradients<Scalar>& Gradients<Scalar>::operator*=(Scalar s) {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    weights[l] *= s;
    bias[l] *= s;
  }
  return *this;
}

namespace {

/// Shared reverse pass; parameter gradients are added into `acc`.
template <typename Scalar>
Tensor<Scalar> reverse_pass(const Model<Scalar>& model,
                            const ActivationRecord<Scalar>& record,
                            const Vector<Scalar>& logit_grad, Gradients<Scalar>& acc,
                            bool need_input_grad) {
  const auto n = model.layers.size();
  if (record.size() != n) throw ShapeError("activation record does not match model");
  Tensor<Scalar> g(static_cast<int>(logit_grad.size()), 1, 1, logit_grad);
  for (std::size_t i = n; i-- > 0;) {
    const auto& x = record.inputs[i];
    const bool need_input = i > 0 || need_input_grad;
    std::visit(
        [&](const auto& l) {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, Conv3x3<Scalar>>) {
            const Matrix<Scalar> cols = im2col3x3(x);
            acc.weights[i].noalias() += g.data * cols.transpose();
            acc.bias[i] += g.data.rowwise().sum();
            if (need_input) g = conv3x3_transpose(l.weights, g);
          } else if constexpr (std::is_same_v<L, Dense<Scalar>>) {
            const Eigen::Map<const Vector<Scalar>> xv(x.data.data(), x.size());
            const Eigen::Map<const Vector<Scalar>> gv(g.data.data(), g.size());
            acc.weights[i].noalias() += gv * xv.transpose();
            acc.bias[i] += gv;
            if (need_input) g = dense_transpose(l.weights, g);
          } else if constexpr (std::is_same_v<L, Relu>) {
            g = relu_backward(x, g);
          } else if constexpr (std::is_same_v<L, MaxPool2x2>) {
            g = maxpool2x2_backward<Scalar>(record.argmax[i], g, x.height, x.width);
          } else {
            g = unflatten(g, x.channels, x.height, x.width);
          }
        },
        model.layers[i]);
  }
  return need_input_grad ? g : Tensor<Scalar>{};
}

}  // namespace

template <typename Scalar>
BackwardResult<Scalar> backward(const Model<Scalar>& model,
                                const ActivationRecord<Scalar>& record,
                                const Vector<Scalar>& logit_grad, bool need_input_grad) {
  BackwardResult<Scalar> r;
  r.params = Gradients<Scalar>::zeros_like(model);
  r.input_grad = reverse_pass(model, record, logit_grad, r.params, need_input_grad);
  return r;
}

template <typename Scalar>
void backward_accumulate(const Model<Scalar>& model,
                         const ActivationRecord<Scalar>& record,
                         const Vector<Scalar>& logit_grad, Gradients<Scalar>& acc) {
  reverse_pass(model, record, logit_grad, acc, false);
}

// --- checkpoints ------------------------------------------------------------

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model,
                     const nlohmann::json& metadata) {
  nlohmann::json header{{"format_version", kCheckpointFormatVersion},
                        {"architecture", model.arch},
                        {"seed", model.seed},
                        {"init_scheme", model.init_scheme},
                        {"trained_epochs", model.trained_epochs},
                        {"layers", nlohmann::json::array()},
                        {"metadata", metadata}};
  for (const auto& layer : model.layers) header["layers"].push_back(to_string(kind_of(layer)));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << header.dump() << '\n';
  for (const auto& layer : model.layers) {
    const Matrix<float>* w = nullptr;
    const Vector<float>* b = nullptr;
    std::vector<std::uint32_t> wdims;
    if (const auto* c = std::get_if<Conv3x3<float>>(&layer)) {
      w = &c->weights;
      b = &c->bias;
      wdims = {static_cast<std::uint32_t>(c->out_channels()),
               static_cast<std::uint32_t>(c->in_channels()), 3, 3};
    } else if (const auto* d = std::get_if<Dense<float>>(&layer)) {
      w = &d->weights;
      b = &d->bias;
      wdims = {static_cast<std::uint32_t>(w->rows()), static_cast<std::uint32_t>(w->cols())};
    } else {
      continue;
    }
    write_ten(out, wdims, std::span<const float>(w->data(), static_cast<std::size_t>(w->size())));
    const std::uint32_t bdims[] = {static_cast<std::uint32_t>(b->size())};
    write_ten(out, bdims, std::span<const float>(b->data(), static_cast<std::size_t>(b->size())));
  }
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Model<float> load_checkpoint(const std::filesystem::path& path, nlohmann::json* metadata) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string line;
  std::getline(in, line);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint header in " + path.string() + ": " + e.what());
  }
  if (header.value("format_version", 0) != kCheckpointFormatVersion)
    throw IoError("unsupported checkpoint version in " + path.string());
  Model<float> model = build_model<float>(header.at("architecture").get<Architecture>(), 0);
  model.seed = header.at("seed").get<std::uint64_t>();
  model.init_scheme = header.at("init_scheme").get<std::string>();
  model.trained_epochs = header.at("trained_epochs").get<int>();
  for (auto& layer : model.layers) {
    auto load = [&](Matrix<float>& w, Vector<float>& b) {
      TenHeader h;
      std::vector<float> wv = read_ten_f32(in, &h);
      if (wv.size() != static_cast<std::size_t>(w.size()))
        throw IoError("checkpoint weight tensor has the wrong size");
      std::copy(wv.begin(), wv.end(), w.data());
      std::vector<float> bv = read_ten_f32(in, &h);
      if (bv.size() != static_cast<std::size_t>(b.size()))
        throw IoError("checkpoint bias tensor has the wrong size");
      std::copy(bv.begin(), bv.end(), b.data());
    };
    if (auto* c = std::get_if<Conv3x3<float>>(&layer)) load(c->weights, c->bias);
    if (auto* d = std::get_if<Dense<float>>(&layer)) load(d->weights, d->bias);
  }
  if (metadata) *metadata = header.value("metadata", nlohmann::json::object());
  return model;
}

// --- instantiations ---------------------------------------------------------

#define XB_INSTANTIATE(S)                                                              \
  template struct Model<S>;                                                            \
  template Model<float> Model<S>::cast<float>() const;                                 \
  template Model<double> Model<S>::cast<double>() const;                               \
  template Matrix<S> he_init<S>(int, int, int, std::uint64_t);                         \
  template Model<S> build_model<S>(const Architecture&, std::uint64_t);                \
  template Matrix<S> im2col3x3<S>(const Tensor<S>&);                                   \
  template Tensor<S> col2im3x3<S>(const Matrix<S>&, int, int, int);                    \
  template Tensor<S> conv3x3_forward<S>(const Tensor<S>&, const Matrix<S>&,            \
                                        const Vector<S>&);                             \
  template Tensor<S> conv3x3_transpose<S>(const Matrix<S>&, const Tensor<S>&);         \
  template ParamGrads<S> conv3x3_backward<S>(const Tensor<S>&, const Matrix<S>&,       \
                                             const Tensor<S>&, bool);                  \
  template Tensor<S> relu_forward<S>(const Tensor<S>&);                                \
  template Tensor<S> relu_backward<S>(const Tensor<S>&, const Tensor<S>&);             \
  template PoolResult<S> maxpool2x2_forward<S>(const Tensor<S>&);                      \
  template Tensor<S> maxpool2x2_backward<S>(std::span<const int>, const Tensor<S>&,    \
                                            int, int);                                 \
  template Tensor<S> flatten<S>(const Tensor<S>&);                                     \
  template Tensor<S> unflatten<S>(const Tensor<S>&, int, int, int);                    \
  template Tensor<S> dense_forward<S>(const Tensor<S>&, const Matrix<S>&,              \
                                      const Vector<S>&);                               \
  template Tensor<S> dense_transpose<S>(const Matrix<S>&, const Tensor<S>&);           \
  template ParamGrads<S> dense_backward<S>(const Tensor<S>&, const Matrix<S>&,         \
                                           const Tensor<S>&, bool);                    \
  template LossResult<S> softmax_xent<S>(const Vector<S>&, int);                       \
  template ForwardResult<S> forward<S>(const Model<S>&, const Tensor<S>&);             \
  template Vector<S> infer<S>(const Model<S>&, const Tensor<S>&);                      \
  template std::vector<ForwardResult<S>> forward<S>(const Model<S>&,                   \
                                                    std::span<const Tensor<S>>);       \
  template int argmax_class<S>(const Vector<S>&);                                      \
  template std::vector<int> predict<S>(const Model<S>&, std::span<const Tensor<S>>);   \
  template struct Gradients<S>;                                                        \
  template BackwardResult<S> backward<S>(const Model<S>&, const ActivationRecord<S>&,  \
                                         const Vector<S>&, bool);                      \
  template void backward_accumulate<S>(const Model<S>&, const ActivationRecord<S>&,    \
                                       const Vector<S>&, Gradients<S>&);

XB_INSTANTIATE(float)
XB_INSTANTIATE(double)

#undef XB_INSTANTIATE

}  // namespace xb::net
