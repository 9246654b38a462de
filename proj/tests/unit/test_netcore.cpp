#include <doctest.h>

#include <cmath>

#include "xaibench/errors.hpp"
#include "xaibench/netcore.hpp"
#include "xaibench/rng.hpp"
#include "test_util.hpp"

using namespace xb;
using namespace xb::net;

namespace {

Architecture tiny_arch() {
  Architecture a;
  a.input = {1, 8, 8};
  a.block_filters = {3};
  a.dense_units = 5;
  return a;
}

Tensor<double> random_tensor(int c, int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<double> t(c, h, w);
  for (Eigen::Index i = 0; i < t.data.size(); ++i) t.data.data()[i] = rng.normal();
  return t;
}

}  // namespace

TEST_SUITE("netcore") {

TEST_CASE("he initialization statistics") {
  const auto w = he_init<double>(1000, 100, 100, 42);
  const double mean = w.mean();
  const double sd = std::sqrt((w.array() - mean).square().mean());
  CHECK(std::abs(mean) < 0.01);
  CHECK(sd == doctest::Approx(std::sqrt(2.0 / 100)).epsilon(0.03));
  CHECK(he_init<double>(3, 4, 4, 42) == he_init<double>(3, 4, 4, 42));

  const auto m = build_model<float>(tiny_arch(), 9);
  for (const auto& l : m.layers) {
    if (auto* c = std::get_if<Conv3x3<float>>(&l)) CHECK(c->bias.isZero(0));
    if (auto* d = std::get_if<Dense<float>>(&l)) CHECK(d->bias.isZero(0));
  }
}

TEST_CASE("convolution hand examples") {
  Tensor<double> x = random_tensor(1, 5, 4, 1);
  Matrix<double> ident = Matrix<double>::Zero(1, 9);
  ident(0, 4) = 1;
  CHECK(conv3x3_forward<double>(x, ident, Vector<double>::Zero(1)).data.isApprox(x.data));

  Tensor<double> ones(1, 3, 3, Matrix<double>::Ones(1, 9));
  const auto y = conv3x3_forward<double>(ones, Matrix<double>::Ones(1, 9), Vector<double>::Zero(1));
  CHECK(y.data(0, 4) == 9.0);
  CHECK(y.data(0, 0) == 4.0);
  CHECK(y.data(0, 8) == 4.0);
  CHECK(y.data(0, 1) == 6.0);
}

TEST_CASE("convolution matches a direct sum") {
  const auto x = random_tensor(2, 5, 6, 3);
  Rng rng(4);
  Matrix<double> w(3, 18);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal();
  Vector<double> b(3);
  b << 0.1, -0.2, 0.3;
  const auto y = conv3x3_forward<double>(x, w, b);
  for (int o = 0; o < 3; ++o)
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 6; ++j) {
        double s = b(o);
        for (int c = 0; c < 2; ++c)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int yy = i + ky - 1, xx = j + kx - 1;
              if (yy < 0 || yy >= 5 || xx < 0 || xx >= 6) continue;
              s += w(o, c * 9 + ky * 3 + kx) * x.data(c, yy * 6 + xx);
            }
        CHECK(y.data(o, i * 6 + j) == doctest::Approx(s).epsilon(1e-12));
      }
}

TEST_CASE("col2im is the adjoint of im2col") {
  const auto x = random_tensor(2, 4, 5, 5);
  Rng rng(6);
  Matrix<double> c(18, 20);
  for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = rng.normal();
  const double lhs = (im2col3x3(x).array() * c.array()).sum();
  const double rhs = (x.data.array() * col2im3x3(c, 2, 4, 5).data.array()).sum();
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("relu, pooling and dense") {
  Tensor<double> x(1, 1, 2, (Matrix<double>(1, 2) << -1, 2).finished());
  CHECK(relu_forward(x).data == (Matrix<double>(1, 2) << 0, 2).finished());
  Tensor<double> g(1, 1, 2, (Matrix<double>(1, 2) << 5, 5).finished());
  CHECK(relu_backward(x, g).data == (Matrix<double>(1, 2) << 0, 5).finished());

  Tensor<double> win(1, 2, 2, (Matrix<double>(1, 4) << 1, 2, 3, 4).finished());
  const auto p = maxpool2x2_forward(win);
  CHECK(p.output.data(0, 0) == 4.0);
  CHECK(p.argmax[0] == 3);
  Tensor<double> flat(1, 2, 2, Matrix<double>::Constant(1, 4, 7.0));
  const auto pe = maxpool2x2_forward(flat);
  Tensor<double> up(1, 1, 1, Matrix<double>::Constant(1, 1, 2.0));
  const auto back = maxpool2x2_backward<double>(pe.argmax, up, 2, 2);
  CHECK(back.data == (Matrix<double>(1, 4) << 2, 0, 0, 0).finished());

  Architecture paper = Architecture::paper();
  CHECK(paper.feature_shape().height == 8);
  CHECK(paper.feature_shape().width == 12);

  Tensor<double> v(2, 1, 1, (Matrix<double>(2, 1) << 1, 2).finished());
  const auto d = dense_forward<double>(v, (Matrix<double>(1, 2) << 1, -1).finished(), Vector<double>::Zero(1));
  CHECK(d.data(0, 0) == -1.0);
  CHECK(dense_forward<double>(v, Matrix<double>::Identity(2, 2), Vector<double>::Zero(2)).data == v.data);
}

TEST_CASE("softmax cross-entropy") {
  const auto a = softmax_xent<double>(Vector<double>::Zero(2), 0);
  CHECK(a.loss == doctest::Approx(std::log(2.0)));
  CHECK(a.logit_grad(0) == doctest::Approx(-0.5));
  CHECK(a.logit_grad(1) == doctest::Approx(0.5));
  const auto b = softmax_xent<double>((Vector<double>(2) << 10, -10).finished(), 0);
  CHECK(b.loss == doctest::Approx(std::log1p(std::exp(-20.0))).epsilon(1e-6));
  CHECK(b.loss == doctest::Approx(2.06e-9).epsilon(0.01));
  const auto big = softmax_xent<float>((Vector<float>(2) << 1000, -1000).finished(), 1);
  CHECK(std::isfinite(big.loss));
}

TEST_CASE("input and parameter gradients match finite differences") {
  auto m = build_model<double>(tiny_arch(), 11);
  // Nonzero biases so that every term of the backward pass is exercised.
  for (auto& l : m.layers) {
    if (auto* c = std::get_if<Conv3x3<double>>(&l)) c->bias.setConstant(0.05);
    if (auto* d = std::get_if<Dense<double>>(&l)) d->bias.setConstant(-0.02);
  }
  const auto x = random_tensor(1, 8, 8, 12);
  const auto fwd = forward(m, x);
  const auto loss = softmax_xent(fwd.logits, 1);
  const auto bw = backward(m, fwd.record, loss.logit_grad, true);

  const double h = 1e-6;
  auto loss_at = [&](const Model<double>& mm, const Tensor<double>& xx) {
    return softmax_xent(infer(mm, xx), 1).loss;
  };
  for (int i = 0; i < 64; i += 7) {
    auto xp = x, xm = x;
    xp.data(0, i) += h;
    xm.data(0, i) -= h;
    CHECK(bw.input_grad.data(0, i) ==
          doctest::Approx((loss_at(m, xp) - loss_at(m, xm)) / (2 * h)).epsilon(1e-5));
  }
  // first conv weight and last dense bias
  auto& c0 = std::get<Conv3x3<double>>(m.layers[0]);
  for (int k : {0, 4, 13}) {
    const double w0 = c0.weights.data()[k];
    c0.weights.data()[k] = w0 + h;
    const double lp = loss_at(m, x);
    c0.weights.data()[k] = w0 - h;
    const double lm = loss_at(m, x);
    c0.weights.data()[k] = w0;
    CHECK(bw.params.weights[0].data()[k] == doctest::Approx((lp - lm) / (2 * h)).epsilon(1e-5));
  }
  const auto last = m.layers.size() - 1;
  auto& dl = std::get<Dense<double>>(m.layers[last]);
  dl.bias(0) += h;
  const double lp = loss_at(m, x);
  dl.bias(0) -= 2 * h;
  const double lm = loss_at(m, x);
  dl.bias(0) += h;
  CHECK(bw.params.bias[last](0) == doctest::Approx((lp - lm) / (2 * h)).epsilon(1e-6));
}

TEST_CASE("model forward passes") {
  const auto paper = build_model<float>(Architecture::paper(), 1);
  Tensor<float> x(1, 140, 192, Matrix<float>::Constant(1, 140 * 192, 0.5f));
  const auto fwd = forward(paper, x);
  CHECK(fwd.logits.allFinite());
  // 4 blocks of (conv, relu, conv, relu, pool), flatten, dense, relu, dense
  CHECK(fwd.record.size() == 24);
  CHECK(paper.layers.size() == 24);

  auto zero = build_model<float>(tiny_arch(), 2);
  for (auto& l : zero.layers) {
    if (auto* c = std::get_if<Conv3x3<float>>(&l)) c->weights.setZero();
    if (auto* d = std::get_if<Dense<float>>(&l)) d->weights.setZero();
  }
  Tensor<float> y(1, 8, 8, Matrix<float>::Random(1, 64));
  CHECK(infer(zero, y).isZero(0));
  CHECK(argmax_class<float>(Vector<float>::Zero(2)) == 0);

  auto broken = build_model<float>(tiny_arch(), 2);
  std::get<Conv3x3<float>>(broken.layers[0]).weights(0, 0) = std::nanf("");
  CHECK_THROWS_AS(forward(broken, y), NumericError);
}

TEST_CASE("checkpoints round-trip") {
  test::TempDir tmp;
  const auto m = build_model<float>(tiny_arch(), 77);
  save_checkpoint(tmp.path() / "m.bin", m, {{"note", "x"}});
  nlohmann::json meta;
  const auto back = load_checkpoint(tmp.path() / "m.bin", &meta);
  CHECK(meta["note"] == "x");
  Tensor<float> y(1, 8, 8, Matrix<float>::Random(1, 64));
  CHECK(infer(back, y) == infer(m, y));
  CHECK_THROWS_AS(load_checkpoint(tmp.path() / "missing.bin"), IoError);
}

}  // TEST_SUITE
