#pragma once

// Relevance propagation: eight attribution methods expressed as per-layer
// backward rules over a recorded forward pass.

#include <array>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "xaibench/netcore.hpp"
#include "xaibench/raster.hpp"

namespace xb::saliency {

enum class Method {
  gradient,
  lrp_z,
  lrp_alpha_beta,
  deep_taylor,
  guided_backprop,
  deconvnet,
  pattern_net,
  pattern_attribution,
};

inline constexpr std::array<Method, 8> kAllMethods = {
    Method::gradient,        Method::lrp_z,     Method::lrp_alpha_beta,
    Method::deep_taylor,     Method::guided_backprop, Method::deconvnet,
    Method::pattern_net,     Method::pattern_attribution};

std::string to_string(Method m);
Method method_from_string(const std::string& s);

/// True for methods whose backward signal starts at the target logit value
/// (LRP variants, deep Taylor, PatternAttribution); the others start at 1.
bool starts_at_logit(Method m);
bool needs_patterns(Method m);

struct MethodSpec {
  Method kind = Method::gradient;
  double alpha = 2.0;
  double beta = 1.0;
  double epsilon = 1e-7;
  /// Box bounds of the input pixels for the deep Taylor z^B rule.
  double lower = 0.0;
  double upper = 1.0;

  void validate() const;
  static MethodSpec of(Method m) {
    MethodSpec s;
    s.kind = m;
    return s;
  }
};

/// Signal-direction estimates, one per conv/dense layer (same shape as its
/// weights); entries for parameter-free layers are empty.
template <typename Scalar>
struct PatternSet {
  std::vector<net::Matrix<Scalar>> patterns;
  nlohmann::json stats = nlohmann::json::object();

  bool has(std::size_t layer) const {
    return layer < patterns.size() && patterns[layer].size() > 0;
  }
};

template <typename Scalar>
struct Heatmap {
  Raster<Scalar> relevance;
  Method method = Method::gradient;
  int target_class = 0;
  std::string sample_id;
};

// --- per-layer rules --------------------------------------------------------
//
// `conv` selects between a same-padded 3x3 convolution and a dense layer;
// the weight matrix layouts are those of net::Conv3x3 / net::Dense.

/// z = W a (no bias) for either layer kind.
template <typename Scalar>
net::Tensor<Scalar> project(bool conv, const net::Matrix<Scalar>& weights,
                            const net::Tensor<Scalar>& a);
/// W^T s for either layer kind.
template <typename Scalar>
net::Tensor<Scalar> backproject(bool conv, const net::Matrix<Scalar>& weights,
                                const net::Tensor<Scalar>& s);

/// Exact chain rule through one layer of the recorded pass.
template <typename Scalar>
net::Tensor<Scalar> rule_gradient(const net::Layer<Scalar>& layer,
                                  const net::ActivationRecord<Scalar>& record,
                                  std::size_t index, const net::Tensor<Scalar>& g);

/// max(0, g); the forward mask is ignored.
template <typename Scalar>
net::Tensor<Scalar> rule_deconvnet(const net::Tensor<Scalar>& g);

/// g * 1[x > 0] * 1[g > 0]
template <typename Scalar>
net::Tensor<Scalar> rule_guided_backprop(const net::Tensor<Scalar>& x,
                                         const net::Tensor<Scalar>& g);

/// R_j = sum_i a_j w_ij / (z_i + eps * sign(z_i)) * R_i with z_i = sum_j a_j w_ij + b_i.
template <typename Scalar>
net::Tensor<Scalar> rule_lrp_z(bool conv, const net::Matrix<Scalar>& weights,
                               const net::Vector<Scalar>& bias,
                               const net::Tensor<Scalar>& a,
                               const net::Tensor<Scalar>& relevance, double epsilon);

/// alpha * positive-share minus beta * negative-share redistribution; the
/// bias is split by sign into the matching denominator. A side whose total is
/// within epsilon of zero counts as empty; a neuron with a single nonempty
/// side sends all of its relevance through it.
template <typename Scalar>
net::Tensor<Scalar> rule_lrp_alpha_beta(bool conv, const net::Matrix<Scalar>& weights,
                                        const net::Vector<Scalar>& bias,
                                        const net::Tensor<Scalar>& a,
                                        const net::Tensor<Scalar>& relevance,
                                        double alpha, double beta, double epsilon);

/// Deep Taylor: z^+ rule (alpha = 1, beta = 0) on hidden layers; z^B rule with
/// box bounds [lower, upper] on the pixel layer (`first_layer`).
template <typename Scalar>
net::Tensor<Scalar> rule_deep_taylor(bool conv, const net::Matrix<Scalar>& weights,
                                     const net::Vector<Scalar>& bias,
                                     const net::Tensor<Scalar>& a,
                                     const net::Tensor<Scalar>& relevance, bool first_layer,
                                     double lower, double upper, double epsilon);

/// Gradient backward with the layer's weights replaced by its pattern.
template <typename Scalar>
net::Tensor<Scalar> rule_pattern_net(bool conv, const net::Matrix<Scalar>& pattern,
                                     const net::Tensor<Scalar>& g);

/// Gradient backward with the layer's weights replaced by weights ⊙ pattern.
template <typename Scalar>
net::Tensor<Scalar> rule_pattern_attribution(bool conv, const net::Matrix<Scalar>& weights,
                                             const net::Matrix<Scalar>& pattern,
                                             const net::Tensor<Scalar>& g);

// --- model-level ------------------------------------------------------------

/// Input-layer signal of `method` for `target_class`. Channels are summed;
/// vector-input models (1 x 1 spatial extent) yield a 1 x channels raster.
template <typename Scalar>
Heatmap<Scalar> explain(const net::Model<Scalar>& model,
                        const net::ActivationRecord<Scalar>& record,
                        const MethodSpec& method, int target_class,
                        const PatternSet<Scalar>* patterns = nullptr);

/// Per-layer backward signals of an explanation: entry l is the signal at the
/// input of layer l, the last entry the initial one-hot logit signal.
template <typename Scalar>
std::vector<net::Tensor<Scalar>> explain_layers(const net::Model<Scalar>& model,
                                                const net::ActivationRecord<Scalar>& record,
                                                const MethodSpec& method, int target_class,
                                                const PatternSet<Scalar>* patterns = nullptr);

template <typename Scalar>
using InputProvider = std::function<net::Tensor<Scalar>(std::size_t)>;

/// Streaming PatternNet estimator. For each output neuron of a conv/dense
/// layer followed by a ReLU, with x its input patch and y its pre-activation:
///   c = E+[x y] - E+[x] E+[y]   (E+ over y > 0),   a = c / (w^T c).
/// Conv neurons pool statistics over all spatial positions. The output layer,
/// neurons that never fire, and degenerate w^T c use the linear estimator
/// (expectations over all samples); each fallback is listed in stats.
template <typename Scalar>
PatternSet<Scalar> estimate_patterns(const net::Model<Scalar>& model,
                                     const InputProvider<Scalar>& inputs,
                                     std::size_t count);

void save_patterns(const std::filesystem::path& path, const PatternSet<float>& patterns);
PatternSet<float> load_patterns(const std::filesystem::path& path,
                                const net::Model<float>& model);

}  // namespace xb::saliency
