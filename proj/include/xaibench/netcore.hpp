#pragma once

// Small convolutional network engine: exact forward/backward passes over
// per-sample tensors, plus the activation record that relevance rules replay.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

namespace xb::net {

template <typename Scalar>
using Matrix =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// One sample's signal: `channels` rows of `height * width` values.
/// Dense activations are channels x 1 x 1.
template <typename Scalar>
struct Tensor {
  int channels = 0;
  int height = 1;
  int width = 1;
  Matrix<Scalar> data;

  Tensor() = default;
  Tensor(int c, int h, int w)
      : channels(c), height(h), width(w), data(Matrix<Scalar>::Zero(c, h * w)) {}
  Tensor(int c, int h, int w, Matrix<Scalar> values)
      : channels(c), height(h), width(w), data(std::move(values)) {}

  Eigen::Index size() const { return data.size(); }
  bool same_shape(const Tensor& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
  template <typename Other>
  Tensor<Other> cast() const {
    return {channels, height, width, data.template cast<Other>()};
  }
};

template <typename Scalar>
struct Conv3x3 {
  /// out_channels x (in_channels * 9); column index = c * 9 + ky * 3 + kx.
  Matrix<Scalar> weights;
  Vector<Scalar> bias;
  int in_channels() const { return static_cast<int>(weights.cols() / 9); }
  int out_channels() const { return static_cast<int>(weights.rows()); }
};

template <typename Scalar>
struct Dense {
  Matrix<Scalar> weights;  // out x in
  Vector<Scalar> bias;
};

struct Relu {};
struct MaxPool2x2 {};
struct Flatten {};

template <typename Scalar>
using Layer =
    std::variant<Conv3x3<Scalar>, Relu, MaxPool2x2, Flatten, Dense<Scalar>>;

enum class LayerKind { conv3x3, relu, maxpool2x2, flatten, dense };

template <typename Scalar>
LayerKind kind_of(const Layer<Scalar>& layer) {
  return static_cast<LayerKind>(layer.index());
}
std::string to_string(LayerKind kind);

template <typename Scalar>
bool is_linear(const Layer<Scalar>& layer) {
  return std::holds_alternative<Conv3x3<Scalar>>(layer) ||
         std::holds_alternative<Dense<Scalar>>(layer);
}

struct InputShape {
  int channels = 1;
  int height = 64;
  int width = 64;
  friend bool operator==(const InputShape&, const InputShape&) = default;
};

/// VGG-style stack: per block [conv, relu, conv, relu, maxpool] with the given
/// filter count, then flatten, dense(dense_units), relu, dense(classes).
struct Architecture {
  InputShape input{};
  std::vector<int> block_filters{32, 64};
  int dense_units = 128;
  int classes = 2;

  static Architecture paper();  // 140 x 192, blocks 32, 64, 128, 256
  static Architecture desk();   // 64 x 64, blocks 32, 64
  /// Spatial extent after all pooling stages (floor semantics).
  InputShape feature_shape() const;
  int flatten_width() const;
};

void to_json(nlohmann::json& j, const Architecture& a);
void from_json(const nlohmann::json& j, Architecture& a);

template <typename Scalar>
struct Model {
  Architecture arch;
  std::vector<Layer<Scalar>> layers;
  std::uint64_t seed = 0;
  std::string init_scheme = "he_normal";
  int trained_epochs = 0;

  template <typename Other>
  Model<Other> cast() const;
  /// Indices of conv/dense layers in order.
  std::vector<int> linear_layers() const;
  /// Number of scalar parameters.
  std::size_t parameter_count() const;
};

/// N(0, sqrt(2 / fan_in)) weights of the given shape; deterministic in seed.
template <typename Scalar>
Matrix<Scalar> he_init(int rows, int cols, int fan_in, std::uint64_t seed);

/// He-initialized model with zero biases. Layer l uses derive_seed(seed, l).
template <typename Scalar>
Model<Scalar> build_model(const Architecture& arch, std::uint64_t seed);

// --- layer operations -------------------------------------------------------

/// (in_channels * 9) x (h * w) patch matrix for same-padded 3x3 windows.
template <typename Scalar>
Matrix<Scalar> im2col3x3(const Tensor<Scalar>& x);

/// Adds columns back onto a channels x h x w tensor (adjoint of im2col3x3).
template <typename Scalar>
Tensor<Scalar> col2im3x3(const Matrix<Scalar>& cols, int channels, int height,
                         int width);

template <typename Scalar>
Tensor<Scalar> conv3x3_forward(const Tensor<Scalar>& x, const Matrix<Scalar>& weights,
                               const Vector<Scalar>& bias);

/// Input gradient of a bias-free convolution with arbitrary weights:
/// the transposed convolution of `g`.
template <typename Scalar>
Tensor<Scalar> conv3x3_transpose(const Matrix<Scalar>& weights,
                                 const Tensor<Scalar>& g);

template <typename Scalar>
struct ParamGrads {
  Tensor<Scalar> input;
  Matrix<Scalar> weights;
  Vector<Scalar> bias;
};

template <typename Scalar>
ParamGrads<Scalar> conv3x3_backward(const Tensor<Scalar>& x,
                                    const Matrix<Scalar>& weights,
                                    const Tensor<Scalar>& g, bool need_input = true);

template <typename Scalar>
Tensor<Scalar> relu_forward(const Tensor<Scalar>& x);
/// g * 1[x > 0]
template <typename Scalar>
Tensor<Scalar> relu_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& g);

template <typename Scalar>
struct PoolResult {
  Tensor<Scalar> output;
  /// Per output element, the flat index (y * width + x) of the winning input
  /// within its channel. Ties go to the first element in row-major order.
  std::vector<int> argmax;
};

template <typename Scalar>
PoolResult<Scalar> maxpool2x2_forward(const Tensor<Scalar>& x);
template <typename Scalar>
Tensor<Scalar> maxpool2x2_backward(std::span<const int> argmax, const Tensor<Scalar>& g,
                                   int in_height, int in_width);

template <typename Scalar>
Tensor<Scalar> flatten(const Tensor<Scalar>& x);
/// Reshapes a flat signal back to the given extents.
template <typename Scalar>
Tensor<Scalar> unflatten(const Tensor<Scalar>& g, int channels, int height, int width);

template <typename Scalar>
Tensor<Scalar> dense_forward(const Tensor<Scalar>& x, const Matrix<Scalar>& weights,
                             const Vector<Scalar>& bias);
template <typename Scalar>
Tensor<Scalar> dense_transpose(const Matrix<Scalar>& weights, const Tensor<Scalar>& g);
template <typename Scalar>
ParamGrads<Scalar> dense_backward(const Tensor<Scalar>& x, const Matrix<Scalar>& weights,
                                  const Tensor<Scalar>& g, bool need_input = true);

template <typename Scalar>
struct LossResult {
  Scalar loss = 0;
  Vector<Scalar> probabilities;
  Vector<Scalar> logit_grad;
};

/// Max-shifted softmax with cross-entropy against class index `label`.
template <typename Scalar>
LossResult<Scalar> softmax_xent(const Vector<Scalar>& logits, int label);

// --- model-level passes -----------------------------------------------------

/// Inputs and outputs of every layer for one forward pass. Conv/dense outputs
/// are pre-activation; pooling layers also keep their argmax routing.
template <typename Scalar>
struct ActivationRecord {
  std::vector<Tensor<Scalar>> inputs;
  std::vector<Tensor<Scalar>> outputs;
  std::vector<std::vector<int>> argmax;
  std::size_t size() const { return inputs.size(); }
};

template <typename Scalar>
struct ForwardResult {
  Vector<Scalar> logits;
  ActivationRecord<Scalar> record;
};

/// Throws NumericError naming the layer if any output is NaN/Inf.
template <typename Scalar>
ForwardResult<Scalar> forward(const Model<Scalar>& model, const Tensor<Scalar>& x);

/// Logits only; does not keep intermediate tensors.
template <typename Scalar>
Vector<Scalar> infer(const Model<Scalar>& model, const Tensor<Scalar>& x);

template <typename Scalar>
std::vector<ForwardResult<Scalar>> forward(const Model<Scalar>& model,
                                           std::span<const Tensor<Scalar>> batch);

/// argmax of logits, ties toward the lowest class index.
template <typename Scalar>
int argmax_class(const Vector<Scalar>& logits);

template <typename Scalar>
std::vector<int> predict(const Model<Scalar>& model, std::span<const Tensor<Scalar>> batch);

/// Parameter gradients, one entry per layer (empty for parameter-free layers).
template <typename Scalar>
struct Gradients {
  std::vector<Matrix<Scalar>> weights;
  std::vector<Vector<Scalar>> bias;

  static Gradients zeros_like(const Model<Scalar>& model);
  Gradients& operator+=(const Gradients& other);
  Gradients& operator*=(Scalar s);
};

template <typename Scalar>
struct BackwardResult {
  Gradients<Scalar> params;
  Tensor<Scalar> input_grad;  // empty unless requested
};

/// Backpropagates `logit_grad` through the recorded pass.
template <typename Scalar>
BackwardResult<Scalar> backward(const Model<Scalar>& model,
                                const ActivationRecord<Scalar>& record,
                                const Vector<Scalar>& logit_grad,
                                bool need_input_grad = false);

/// Adds `grads` into `acc` without allocating (acc must be zeros_like(model)).
template <typename Scalar>
void backward_accumulate(const Model<Scalar>& model,
                         const ActivationRecord<Scalar>& record,
                         const Vector<Scalar>& logit_grad, Gradients<Scalar>& acc);

// --- checkpoints ------------------------------------------------------------

inline constexpr int kCheckpointFormatVersion = 1;

/// JSON header line (architecture, seed, metadata, format version) followed
/// by TEN1 tensors: weights then bias for every conv/dense layer, in order.
void save_checkpoint(const std::filesystem::path& path, const Model<float>& model,
                     const nlohmann::json& metadata = nlohmann::json::object());
Model<float> load_checkpoint(const std::filesystem::path& path,
                             nlohmann::json* metadata = nullptr);

}  // namespace xb::net
