#pragma once

// SGD with classic momentum, loss-threshold and validation-loss early
// stopping, deterministic evaluation, best-of-N selection.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "xaibench/netcore.hpp"
#include "xaibench/synthgen.hpp"

namespace xb::train {

struct Hyperparams {
  double learning_rate = 5e-5;
  double momentum = 0.9;
  int batch_size = 128;
  int eval_batch_size = 32;
  int max_epochs = 125;
  double loss_threshold = 0.05;
  int patience = 10;
  double min_delta = 5e-4;
  int runs = 3;
  std::uint64_t shuffle_seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const Hyperparams& h);
void from_json(const nlohmann::json& j, Hyperparams& h);

enum class StopReason { none, max_epochs, loss_threshold, early_stop, interrupted };
std::string to_string(StopReason r);

struct EpochStats {
  int epoch = 0;  // 1-based
  double train_loss = 0;
  double val_loss = 0;
  double val_accuracy = 0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  StopReason stop_reason = StopReason::none;
  int best_epoch = 0;  // epoch with the lowest monitored validation loss

  /// epoch,train_loss,val_loss,val_acc
  void write_csv(const std::filesystem::path& path) const;
};

/// Labeled network inputs. Labels are 0-based class indices.
class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual std::size_t size() const = 0;
  virtual net::Tensor<float> input(std::size_t k) const = 0;
  virtual int label(std::size_t k) const = 0;
};

/// Dataset split as a source; class c in {1, 2} maps to index c - 1.
class SplitSource final : public SampleSource {
 public:
  explicit SplitSource(const synth::Split& split) : split_(&split) {}
  std::size_t size() const override { return split_->size(); }
  net::Tensor<float> input(std::size_t k) const override;
  int label(std::size_t k) const override { return split_->label(k) - 1; }

 private:
  const synth::Split* split_;
};

class TensorSource final : public SampleSource {
 public:
  TensorSource(std::vector<net::Tensor<float>> inputs, std::vector<int> labels);
  std::size_t size() const override { return inputs_.size(); }
  net::Tensor<float> input(std::size_t k) const override { return inputs_[k]; }
  int label(std::size_t k) const override { return labels_[k]; }

 private:
  std::vector<net::Tensor<float>> inputs_;
  std::vector<int> labels_;
};

/// Keras-style patience counter on a monitored loss.
class EarlyStopping {
 public:
  EarlyStopping(int patience, double min_delta);
  /// Returns true if `loss` improved on the best value by at least min_delta.
  bool update(int epoch, double loss);
  bool should_stop() const { return wait_ >= patience_; }
  int best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_; }

 private:
  int patience_;
  double min_delta_;
  double best_;
  int best_epoch_ = 0;
  int wait_ = 0;
};

struct EvalResult {
  double loss = 0;
  double accuracy = 0;
};

/// Mean cross-entropy and argmax accuracy in stored order. Batching only
/// groups the work; results do not depend on batch_size.
EvalResult evaluate(const net::Model<float>& model, const SampleSource& split,
                    int batch_size = 32);

/// One SGD-momentum step: v <- momentum * v - lr * grad; w <- w + v.
void sgd_momentum_step(net::Model<float>& model, net::Gradients<float>& velocity,
                       const net::Gradients<float>& grad, double learning_rate,
                       double momentum);

/// Mean gradient of the cross-entropy over the given samples. Returns the summed loss.
double batch_gradient(const net::Model<float>& model, const SampleSource& data,
                      std::span<const std::size_t> indices, net::Gradients<float>& grad);

struct TrainResult {
  net::Model<float> model;
  TrainHistory history;
};

using EpochCallback = std::function<void(const EpochStats&)>;
/// Polled after every epoch; returning true ends training (e.g. a wall-clock budget).
using InterruptCheck = std::function<bool()>;

/// Trains until max_epochs, epoch-mean training loss < loss_threshold, or
/// `patience` epochs without a min_delta improvement in validation loss (in
/// which case the best-validation weights are restored). Epoch e shuffles
/// with derive_seed(hp.shuffle_seed, e).
TrainResult train(net::Model<float> model, const SampleSource& train_split,
                  const SampleSource& val_split, const Hyperparams& hp,
                  const EpochCallback& on_epoch = {},
                  const InterruptCheck& interrupt = {});

struct Selection {
  int best_index = 0;
  std::vector<double> accuracies;
  double mean_accuracy = 0;
  double std_accuracy = 0;  // population
};

/// argmax accuracy, ties toward the lowest run index; mean and population std.
Selection select_best(std::span<const double> holdout_accuracies);
Selection select_best(std::span<const net::Model<float>> models,
                      const SampleSource& holdout, int batch_size = 32);

}  // namespace xb::train
