#include "xaibench/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>

#include "xaibench/errors.hpp"
#include "xaibench/rng.hpp"

namespace xb::train {

void Hyperparams::validate() const {
  if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (batch_size < 1 || eval_batch_size < 1) throw ConfigError("batch sizes must be positive");
  if (max_epochs < 1) throw ConfigError("max_epochs must be positive");
  if (!(loss_threshold > 0.0)) throw ConfigError("loss threshold must be positive");
  if (patience < 1)
    throw ConfigError("patience must be positive");
  if (!(min_delta > 0.0)) throw ConfigError("min_delta must be positive");
  if (runs < 1) throw ConfigError("runs must be positive");
}

void to_json(nlohmann::json& j, const Hyperparams& h) {
  j = nlohmann::json{{"learning_rate", h.learning_rate},
                     {"momentum", h.momentum},
                     {"batch_size", h.batch_size},
                     {"eval_batch_size", h.eval_batch_size},
                     {"max_epochs", h.max_epochs},
                     {"loss_threshold", h.loss_threshold},
                     {"patience", h.patience},
                     {"min_delta", h.min_delta},
                     {"runs", h.runs},
                     {"shuffle_seed", h.shuffle_seed}};
}

void from_json(const nlohmann::json& j, Hyperparams& h) {
  h.learning_rate = j.at("learning_rate").get<double>();
  h.momentum = j.at("momentum").get<double>();
  h.batch_size = j.at("batch_size").get<int>();
  h.eval_batch_size = j.at("eval_batch_size").get<int>();
  h.max_epochs = j.at("max_epochs").get<int>();
  h.loss_threshold = j.at("loss_threshold").get<double>();
  h.patience = j.at("patience").get<int>();
  h.min_delta = j.at("min_delta").get<double>();
  h.runs = j.at("runs").get<int>();
  h.shuffle_seed = j.at("shuffle_seed").get<std::uint64_t>();
}

std::string to_string(StopReason r) {
  switch (r) {
    case StopReason::none: return "none";
    case StopReason::max_epochs: return "max_epochs";
    case StopReason::loss_threshold: return "loss_threshold";
    case StopReason::early_stop: return "early_stop";
    case StopReason::interrupted: return "interrupted";
  }
  return "?";
}

void TrainHistory::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,train_loss,val_loss,val_acc\n" << std::setprecision(10);
  for (const auto& e : epochs)
    out << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.val_accuracy << '\n';
}

net::Tensor<float> SplitSource::input(std::size_t k) const {
  const Image img = split_->image(k);
  const Shape s = split_->shape();
  return {1, s.height, s.width,
          Eigen::Map<const net::Matrix<float>>(img.data(), 1, img.size())};
}

TensorSource::TensorSource(std::vector<net::Tensor<float>> inputs, std::vector<int> labels)
    : inputs_(std::move(inputs)), labels_(std::move(labels)) {
  if (inputs_.size() != labels_.size())
    throw ShapeError("tensor source: inputs and labels differ in length");
}

EarlyStopping::EarlyStopping(int patience, double min_delta)
    : patience_(patience), min_delta_(min_delta), best_(std::numeric_limits<double>::infinity()) {}

bool EarlyStopping::update(int epoch, double loss) {
  if (loss < best_ - min_delta_) {
    best_ = loss;
    best_epoch_ = epoch;
    wait_ = 0;
    return true;
  }
  ++wait_;
  return false;
}

EvalResult evaluate(const net::Model<float>& model, const SampleSource& split,
                    int batch_size) {
  if (split.size() == 0) throw ConfigError("cannot evaluate on an empty split");
  if (batch_size < 1) throw ConfigError("batch size must be positive");
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < split.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(split.size(), start + static_cast<std::size_t>(batch_size));
    for (std::size_t k = start; k < end; ++k) {
      const auto logits = net::infer(model, split.input(k));
      const int label = split.label(k);
      loss += net::softmax_xent(logits, label).loss;
      if (net::argmax_class(logits) == label) ++correct;
    }
  }
  const auto n = static_cast<double>(split.size());
  return {loss / n, static_cast<double>(correct) / n};
}

void sgd_momentum_step(net::Model<float>& model, net::Gradients<float>& velocity,
                       const net::Gradients<float>& grad, double learning_rate,
                       double momentum) {
  const auto lr = static_cast<float>(learning_rate);
  const auto mu = static_cast<float>(momentum);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    auto update = [&](net::Matrix<float>& w, net::Vector<float>& b) {
      velocity.weights[l] = mu * velocity.weights[l] - lr * grad.weights[l];
      velocity.bias[l] = mu * velocity.bias[l] - lr * grad.bias[l];
      w += velocity.weights[l];
      b += velocity.bias[l];
    };
    if (auto* c = std::get_if<net::Conv3x3<float>>(&model.layers[l])) update(c->weights, c->bias);
    if (auto* d = std::get_if<net::Dense<float>>(&model.layers[l])) update(d->weights, d->bias);
  }
}

double batch_gradient(const net::Model<float>& model, const SampleSource& data,
                      std::span<const std::size_t> indices, net::Gradients<float>& grad) {
  grad *= 0.0f;
  double loss = 0.0;
  for (std::size_t k : indices) {
    const auto fwd = net::forward(model, data.input(k));
    const auto xent = net::softmax_xent(fwd.logits, data.label(k));
    loss += xent.loss;
    net::backward_accumulate(model, fwd.record, xent.logit_grad, grad);
  }
  grad *= 1.0f / static_cast<float>(indices.size());
  return loss;
}

TrainResult train(net::Model<float> model, const SampleSource& train_split,
                  const SampleSource& val_split, const Hyperparams& hp,
                  const EpochCallback& on_epoch, const InterruptCheck& interrupt) {
  hp.validate();
  if (train_split.size() == 0 || val_split.size() == 0)
    throw ConfigError("training needs nonempty train and validation splits");

  TrainResult result;
  auto& history = result.history;
  EarlyStopping stopper(hp.patience, hp.min_delta);
  net::Model<float> best_model = model;
  auto velocity = net::Gradients<float>::zeros_like(model);
  auto grad = net::Gradients<float>::zeros_like(model);

  std::vector<std::size_t> order(train_split.size());
  const int start_epochs = model.trained_epochs;
  for (int epoch = 1; epoch <= hp.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(hp.shuffle_seed, stream_tag("epoch"), static_cast<std::uint64_t>(epoch)));
    shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    try {
      for (std::size_t start = 0; start < order.size();
           start += static_cast<std::size_t>(hp.batch_size)) {
        const std::size_t end =
            std::min(order.size(), start + static_cast<std::size_t>(hp.batch_size));
        const std::span<const std::size_t> batch(order.data() + start, end - start);
        loss_sum += batch_gradient(model, train_split, batch, grad);
        sgd_momentum_step(model, velocity, grad, hp.learning_rate, hp.momentum);
      }
    } catch (const NumericError& e) {
      throw NumericError("training diverged in epoch " + std::to_string(epoch) + ": " + e.what());
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(order.size());
    if (!std::isfinite(stats.train_loss))
      throw NumericError("training diverged in epoch " + std::to_string(epoch) +
                         ": non-finite loss");
    const EvalResult val = evaluate(model, val_split, hp.eval_batch_size);
    stats.val_loss = val.loss;
    stats.val_accuracy = val.accuracy;
    model.trained_epochs = start_epochs + epoch;
    history.epochs.push_back(stats);
    if (on_epoch) on_epoch(stats);

    if (stopper.update(epoch, val.loss)) best_model = model;
    history.best_epoch = stopper.best_epoch();

    if (stats.train_loss < hp.loss_threshold) {
      history.stop_reason = StopReason::loss_threshold;
      break;
    }
    if (stopper.should_stop()) {
      history.stop_reason = StopReason::early_stop;
      model = best_model;
      break;
    }
    if (interrupt && interrupt()) {
      history.stop_reason = StopReason::interrupted;
      break;
    }
  }
  if (history.stop_reason == StopReason::none) history.stop_reason = StopReason::max_epochs;
  result.model = std::move(model);
  return result;
}

Selection select_best(std::span<const double> holdout_accuracies) {
  if (holdout_accuracies.empty()) throw ConfigError("select_best needs at least one candidate");
  Selection s;
  s.accuracies.assign(holdout_accuracies.begin(), holdout_accuracies.end());
  for (std::size_t i = 1; i < s.accuracies.size(); ++i)
    if (s.accuracies[i] > s.accuracies[static_cast<std::size_t>(s.best_index)])
      s.best_index = static_cast<int>(i);
  const double n = static_cast<double>(s.accuracies.size());
  s.mean_accuracy = std::accumulate(s.accuracies.begin(), s.accuracies.end(), 0.0) / n;
  double var = 0.0;
  for (double a : s.accuracies) var += (a - s.mean_accuracy) * (a - s.mean_accuracy);
  s.std_accuracy = std::sqrt(var / n);
  return s;
}

Selection select_best(std::span<const net::Model<float>> models, const SampleSource& holdout,
                      int batch_size) {
  std::vector<double> acc;
  acc.reserve(models.size());
  for (const auto& m : models) acc.push_back(evaluate(m, holdout, batch_size).accuracy);
  return select_best(acc);
}

}  // namespace xb::train
