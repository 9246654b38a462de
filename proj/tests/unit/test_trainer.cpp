#include <doctest.h>

#include <cmath>

#include "xaibench/errors.hpp"
#include "xaibench/rng.hpp"
#include "xaibench/trainer.hpp"

using namespace xb;
using namespace xb::train;
using net::Matrix;
using net::Tensor;

namespace {

net::Architecture vector_arch() {
  net::Architecture a;
  a.input = {2, 1, 1};
  a.block_filters = {};
  a.dense_units = 8;
  return a;
}

/// Two Gaussian blobs at (+-1.5, +-1.5); `flip` inverts every label.
TensorSource blobs(std::size_t n, std::uint64_t seed, bool flip = false) {
  Rng rng(seed);
  std::vector<Tensor<float>> x;
  std::vector<int> y;
  for (std::size_t k = 0; k < n; ++k) {
    const int label = static_cast<int>(k % 2);
    const float c = label ? 1.5f : -1.5f;
    Matrix<float> v(2, 1);
    v << c + 0.3f * static_cast<float>(rng.normal()), c + 0.3f * static_cast<float>(rng.normal());
    x.emplace_back(2, 1, 1, v);
    y.push_back(flip ? 1 - label : label);
  }
  return {std::move(x), std::move(y)};
}

/// Equal logits for every input.
net::Model<float> zero_model() {
  auto m = net::build_model<float>(vector_arch(), 1);
  for (auto& l : m.layers)
    if (auto* d = std::get_if<net::Dense<float>>(&l)) d->weights.setZero();
  return m;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("separable data reaches full training accuracy") {
  const auto train_set = blobs(200, 1);
  const auto val_set = blobs(50, 2);
  Hyperparams hp;
  hp.learning_rate = 0.05;
  hp.batch_size = 16;
  hp.max_epochs = 50;
  hp.patience = 50;
  hp.shuffle_seed = 3;
  const auto res = xb::train::train(net::build_model<float>(vector_arch(), 5), train_set, val_set, hp);
  CHECK(evaluate(res.model, train_set).accuracy == 1.0);
  CHECK(res.history.epochs.size() <= 50);
  CHECK(res.model.trained_epochs == static_cast<int>(res.history.epochs.size()));
}

TEST_CASE("zero learning rate leaves weights unchanged") {
  const auto data = blobs(40, 3);
  Hyperparams hp;
  hp.learning_rate = 0.0;
  hp.max_epochs = 4;
  hp.patience = 10;
  hp.batch_size = 8;
  const auto start = net::build_model<float>(vector_arch(), 8);
  const auto res = xb::train::train(start, data, data, hp);
  for (std::size_t l = 0; l < start.layers.size(); ++l)
    if (auto* d = std::get_if<net::Dense<float>>(&start.layers[l]))
      CHECK(std::get<net::Dense<float>>(res.model.layers[l]).weights == d->weights);
  CHECK(res.history.stop_reason == StopReason::max_epochs);
}

TEST_CASE("early stopping after patience epochs without improvement") {
  // Validation labels are inverted, so learning the training task makes the
  // validation loss rise from the first epoch on.
  const auto train_set = blobs(200, 4);
  const auto val_set = blobs(60, 5, true);
  Hyperparams hp;
  hp.learning_rate = 0.05;
  hp.batch_size = 10;
  hp.max_epochs = 40;
  hp.patience = 4;
  hp.loss_threshold = 1e-9;
  std::vector<double> val_losses;
  const auto res = xb::train::train(net::build_model<float>(vector_arch(), 6), train_set, val_set, hp,
                         [&](const EpochStats& e) { val_losses.push_back(e.val_loss); });
  for (std::size_t k = 1; k < val_losses.size(); ++k) REQUIRE(val_losses[k] > val_losses[k - 1]);
  CHECK(res.history.stop_reason == StopReason::early_stop);
  CHECK(res.history.epochs.size() == 1 + 4);
  CHECK(res.history.best_epoch == 1);
  // best (epoch 1) weights restored
  CHECK(evaluate(res.model, val_set).loss == doctest::Approx(val_losses.front()).epsilon(1e-6));
}

TEST_CASE("loss threshold and interruption") {
  const auto data = blobs(100, 7);
  Hyperparams hp;
  hp.learning_rate = 0.1;
  hp.batch_size = 10;
  hp.max_epochs = 100;
  hp.loss_threshold = 0.05;
  const auto res = xb::train::train(net::build_model<float>(vector_arch(), 2), data, data, hp);
  CHECK(res.history.stop_reason == StopReason::loss_threshold);
  CHECK(res.history.epochs.back().train_loss < 0.05);

  hp.loss_threshold = 1e-9;
  int polls = 0;
  const auto cut = xb::train::train(net::build_model<float>(vector_arch(), 2), data, data, hp, {},
                         [&] { return ++polls == 2; });
  CHECK(cut.history.stop_reason == StopReason::interrupted);
  CHECK(cut.history.epochs.size() == 2);
}

TEST_CASE("training is reproducible") {
  const auto data = blobs(64, 9);
  Hyperparams hp;
  hp.learning_rate = 0.01;
  hp.batch_size = 8;
  hp.max_epochs = 3;
  hp.patience = 5;
  hp.shuffle_seed = 12;
  const auto a = xb::train::train(net::build_model<float>(vector_arch(), 4), data, data, hp);
  const auto b = xb::train::train(net::build_model<float>(vector_arch(), 4), data, data, hp);
  REQUIRE(a.history.epochs.size() == b.history.epochs.size());
  for (std::size_t k = 0; k < a.history.epochs.size(); ++k)
    CHECK(a.history.epochs[k].train_loss == b.history.epochs[k].train_loss);
}

TEST_CASE("evaluation") {
  const auto data = blobs(1000, 10);
  // A zero-weight model has equal logits and predicts class 0 for everything.
  CHECK(evaluate(zero_model(), data).accuracy == doctest::Approx(0.5).epsilon(0.1));
  CHECK(evaluate(zero_model(), data).loss == doctest::Approx(std::log(2.0)));

  Hyperparams hp;
  hp.learning_rate = 0.05;
  hp.batch_size = 16;
  hp.max_epochs = 20;
  const auto trained = xb::train::train(net::build_model<float>(vector_arch(), 3), data, data, hp).model;
  const auto a = evaluate(trained, data, 1);
  const auto b = evaluate(trained, data, 32);
  CHECK(a.accuracy == b.accuracy);
  CHECK(a.loss == doctest::Approx(b.loss).epsilon(1e-6));
  CHECK(a.accuracy == 1.0);
}

TEST_CASE("divergence is reported with the epoch") {
  const auto data = blobs(40, 11);
  Hyperparams hp;
  hp.learning_rate = 1e30;
  hp.batch_size = 4;
  hp.max_epochs = 3;
  try {
    xb::train::train(net::build_model<float>(vector_arch(), 1), data, data, hp);
    FAIL("expected divergence");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("epoch 1") != std::string::npos);
  }
}

TEST_CASE("best-run selection") {
  const std::vector<double> acc{0.97, 0.99, 0.98};
  const auto s = select_best(acc);
  CHECK(s.best_index == 1);
  CHECK(s.mean_accuracy == doctest::Approx(0.98));
  CHECK(s.std_accuracy == doctest::Approx(std::sqrt(2e-4 / 3)));
  CHECK(s.std_accuracy == doctest::Approx(0.00816).epsilon(1e-3));
  CHECK(select_best(std::vector<double>{0.5}).best_index == 0);
  CHECK(select_best(std::vector<double>{0.9, 0.9, 0.9}).best_index == 0);
  CHECK_THROWS_AS(select_best(std::vector<double>{}), ConfigError);
}

TEST_CASE("hyperparameter validation") {
  Hyperparams hp;
  CHECK_NOTHROW(hp.validate());
  hp.momentum = 1.0;
  CHECK_THROWS_AS(hp.validate(), ConfigError);
  hp = {};
  hp.batch_size = 0;
  CHECK_THROWS_AS(hp.validate(), ConfigError);
  hp = {};
  CHECK(hp.learning_rate == 5e-5);
  CHECK(hp.batch_size == 128);
  CHECK(hp.max_epochs == 125);
  CHECK(hp.runs == 3);
}

}  // TEST_SUITE
