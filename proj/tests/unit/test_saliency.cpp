#include <doctest.h>

#include <cmath>

#include "xaibench/errors.hpp"
#include "xaibench/rng.hpp"
#include "xaibench/saliency.hpp"
#include "test_util.hpp"

using namespace xb;
using namespace xb::saliency;
using net::Matrix;
using net::Tensor;
using net::Vector;

namespace {

/// Single dense layer over a vector input.
net::Model<double> linear_model(const Matrix<double>& w) {
  net::Model<double> m;
  m.arch.input = {static_cast<int>(w.cols()), 1, 1};
  m.arch.block_filters = {};
  m.arch.classes = static_cast<int>(w.rows());
  m.layers.emplace_back(net::Dense<double>{w, Vector<double>::Zero(w.rows())});
  return m;
}

Tensor<double> vec(std::initializer_list<double> v) {
  Tensor<double> t(static_cast<int>(v.size()), 1, 1);
  int k = 0;
  for (double x : v) t.data(k++, 0) = x;
  return t;
}

net::Architecture small_conv() {
  net::Architecture a;
  a.input = {1, 8, 8};
  a.block_filters = {4};
  a.dense_units = 6;
  return a;
}

Tensor<double> uniform_input(const net::Architecture& a, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<double> t(a.input.channels, a.input.height, a.input.width);
  for (Eigen::Index i = 0; i < t.data.size(); ++i) t.data.data()[i] = rng.uniform();
  return t;
}

Raster<double> heat(const net::Model<double>& m, const Tensor<double>& x, MethodSpec spec,
                    int target = 0, const PatternSet<double>* p = nullptr) {
  return explain(m, net::forward(m, x).record, spec, target, p).relevance;
}

}  // namespace

TEST_SUITE("saliency") {

TEST_CASE("gradient of a linear map") {
  const auto m = linear_model((Matrix<double>(1, 2) << 1, -2).finished());
  for (auto x : {vec({0.3, 0.9}), vec({-5, 2})}) {
    const auto h = heat(m, x, MethodSpec::of(Method::gradient));
    REQUIRE(h.rows() == 1);
    CHECK(h(0, 0) == 1.0);
    CHECK(h(0, 1) == -2.0);
  }
}

TEST_CASE("relu rules") {
  // deconvnet ignores the forward mask
  const auto d = rule_deconvnet(vec({-0.3, 0.4}));
  CHECK(d.data(0, 0) == 0.0);
  CHECK(d.data(1, 0) == doctest::Approx(0.4));

  const auto gb = rule_guided_backprop(vec({2, -1, 2}), vec({-1, 1, 3}));
  CHECK(gb.data(0, 0) == 0.0);
  CHECK(gb.data(1, 0) == 0.0);
  CHECK(gb.data(2, 0) == 3.0);
}

TEST_CASE("rules coincide with the gradient without relus") {
  Rng rng(3);
  Matrix<double> w(2, 5);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal();
  const auto m = linear_model(w);
  const auto x = vec({0.1, -0.4, 0.7, 0.2, -0.9});
  const auto grad = heat(m, x, MethodSpec::of(Method::gradient), 1);
  CHECK(heat(m, x, MethodSpec::of(Method::deconvnet), 1) == grad);
  CHECK(heat(m, x, MethodSpec::of(Method::guided_backprop), 1) == grad);

  PatternSet<double> same;
  same.patterns = {w};
  CHECK(heat(m, x, MethodSpec::of(Method::pattern_net), 1, &same) == grad);
}

TEST_CASE("lrp hand examples") {
  const auto m = linear_model((Matrix<double>(1, 2) << 1, -1).finished());
  const auto x = vec({1, 2});
  const auto z = heat(m, x, MethodSpec::of(Method::lrp_z));
  CHECK(z(0, 0) == doctest::Approx(1.0));
  CHECK(z(0, 1) == doctest::Approx(-2.0));
  CHECK(z.sum() == doctest::Approx(-1.0));

  MethodSpec ab = MethodSpec::of(Method::lrp_alpha_beta);
  const auto r = heat(m, x, ab);
  CHECK(r(0, 0) == doctest::Approx(-2.0));
  CHECK(r(0, 1) == doctest::Approx(1.0));
  CHECK(r.sum() == doctest::Approx(-1.0));

  const auto one = linear_model((Matrix<double>(1, 1) << 3).finished());
  CHECK(heat(one, vec({0.5}), MethodSpec::of(Method::lrp_z))(0, 0) == doctest::Approx(1.5));

  // positive weights and inputs: no negative side, so alpha-beta reduces to
  // lrp_z (up to lrp_z's epsilon stabilizer)
  const auto pos = linear_model((Matrix<double>(1, 3) << 0.5, 1, 2).finished());
  const auto xp = vec({0.2, 0.3, 0.4});
  MethodSpec ab10 = ab;
  ab10.alpha = 1;
  ab10.beta = 0;
  CHECK(heat(pos, xp, ab10).isApprox(heat(pos, xp, MethodSpec::of(Method::lrp_z)), 1e-6));
  CHECK(heat(pos, xp, ab).isApprox(heat(pos, xp, MethodSpec::of(Method::lrp_z)), 1e-6));
}

TEST_CASE("pattern attribution hand example") {
  const auto m = linear_model((Matrix<double>(1, 2) << 1, -2).finished());
  PatternSet<double> p;
  p.patterns = {(Matrix<double>(1, 2) << 1, 1).finished()};
  const auto x = vec({0.7, 0.1});
  const double y = 0.7 - 0.2;
  const auto h = heat(m, x, MethodSpec::of(Method::pattern_attribution), 0, &p);
  CHECK(h(0, 0) == doctest::Approx(y));
  CHECK(h(0, 1) == doctest::Approx(-2 * y));
  CHECK_THROWS_AS(heat(m, x, MethodSpec::of(Method::pattern_net)), UnsupportedError);
}

TEST_CASE("conservation on random bias-free relu networks") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto m = net::build_model<double>(small_conv(), seed);
    const auto x = uniform_input(small_conv(), 100 + seed);
    const auto fwd = net::forward(m, x);
    const int t = std::abs(fwd.logits(0)) > std::abs(fwd.logits(1)) ? 0 : 1;
    const double logit = fwd.logits(t);
    for (Method k : {Method::lrp_z, Method::lrp_alpha_beta, Method::deep_taylor}) {
      const auto h = explain(m, fwd.record, MethodSpec::of(k), t).relevance;
      CAPTURE(to_string(k));
      CHECK(std::abs(h.sum() - logit) <= 1e-3 * std::abs(logit));
    }
    // hidden deep Taylor signals match alpha-beta(1, 0) and are nonnegative
    MethodSpec ab10 = MethodSpec::of(Method::lrp_alpha_beta);
    ab10.alpha = 1;
    ab10.beta = 0;
    const auto dt = explain_layers(m, fwd.record, MethodSpec::of(Method::deep_taylor), t);
    const auto ab = explain_layers(m, fwd.record, ab10, t);
    REQUIRE(dt.size() == m.layers.size() + 1);
    for (std::size_t l = 1; l < dt.size() - 1; ++l) {
      CHECK((dt[l].data - ab[l].data).cwiseAbs().maxCoeff() <=
            1e-5 * std::max(1.0, ab[l].data.cwiseAbs().maxCoeff()));
      if (logit > 0) CHECK(dt[l].data.minCoeff() >= 0.0);
    }
  }
}

TEST_CASE("deep taylor box rule reduces to z-plus for nonnegative weights") {
  const auto m = linear_model((Matrix<double>(1, 3) << 0.5, 1, 2).finished());
  const auto x = vec({0.2, 0.3, 0.4});
  MethodSpec ab10 = MethodSpec::of(Method::lrp_alpha_beta);
  ab10.alpha = 1;
  ab10.beta = 0;
  // equal up to the box rule's epsilon stabilizer
  CHECK(heat(m, x, MethodSpec::of(Method::deep_taylor)).isApprox(heat(m, x, ab10), 1e-6));
}

TEST_CASE("patterns of linear-generative data") {
  // x = a_s y + a_d e with w^T a_d = 0 and w^T a_s = 1, so y = w^T x.
  const Vector<double> w = (Vector<double>(2) << 1, -1).finished();
  const Vector<double> a_s = (Vector<double>(2) << 1, 0).finished();
  const Vector<double> a_d = (Vector<double>(2) << 1, 1).finished();
  const auto m = linear_model(w.transpose());
  Rng rng(17);
  std::vector<Tensor<double>> xs;
  for (int k = 0; k < 2000; ++k) {
    const Vector<double> v = a_s * rng.normal() + a_d * rng.normal();
    xs.emplace_back(2, 1, 1, Matrix<double>(v));
  }
  const auto p = estimate_patterns<double>(m, [&](std::size_t k) { return xs[k]; }, xs.size());
  REQUIRE(p.has(0));
  const Vector<double> a = p.patterns[0].row(0).transpose();
  CHECK(a.dot(a_s) / (a.norm() * a_s.norm()) > 0.99);
  CHECK(w.dot(a) == doctest::Approx(1.0).epsilon(1e-5));

  // PatternNet points along the signal direction, not along w.
  const auto h = heat(m, xs[0], MethodSpec::of(Method::pattern_net), 0, &p);
  CHECK(std::abs(h(0, 1)) < 0.05 * std::abs(h(0, 0)));
}

TEST_CASE("pattern normalization holds for every neuron") {
  const auto arch = small_conv();
  const auto m = net::build_model<double>(arch, 5);
  const auto p = estimate_patterns<double>(
      m, [&](std::size_t k) { return uniform_input(arch, 1000 + k); }, 60);
  for (int l : m.linear_layers()) {
    REQUIRE(p.has(static_cast<std::size_t>(l)));
    const auto& pat = p.patterns[static_cast<std::size_t>(l)];
    const auto& layer = m.layers[static_cast<std::size_t>(l)];
    const Matrix<double>& w = std::holds_alternative<net::Conv3x3<double>>(layer)
                                  ? std::get<net::Conv3x3<double>>(layer).weights
                                  : std::get<net::Dense<double>>(layer).weights;
    const Vector<double> wa = (w.array() * pat.array()).rowwise().sum();
    CHECK((wa.array() - 1.0).abs().maxCoeff() < 1e-5);
  }
  CHECK(p.stats.contains("warnings"));
}

TEST_CASE("patterns round-trip through a file") {
  test::TempDir tmp;
  const auto arch = small_conv();
  const auto mf = net::build_model<float>(arch, 5);
  const auto p = estimate_patterns<float>(
      mf, [&](std::size_t k) { return uniform_input(arch, k).cast<float>(); }, 20);
  save_patterns(tmp.path() / "p.bin", p);
  const auto back = load_patterns(tmp.path() / "p.bin", mf);
  REQUIRE(back.patterns.size() == p.patterns.size());
  for (std::size_t l = 0; l < p.patterns.size(); ++l) CHECK(back.patterns[l] == p.patterns[l]);
}

TEST_CASE("explanations are deterministic and validated") {
  const auto m = net::build_model<double>(small_conv(), 8);
  const auto x = uniform_input(small_conv(), 3);
  for (Method k : {Method::gradient, Method::lrp_z, Method::guided_backprop}) {
    CHECK(heat(m, x, MethodSpec::of(k)) == heat(m, x, MethodSpec::of(k)));
    CHECK(heat(m, x, MethodSpec::of(k)).rows() == 8);
  }
  CHECK_THROWS_AS(heat(m, x, MethodSpec::of(Method::gradient), 2), ConfigError);
  MethodSpec bad = MethodSpec::of(Method::lrp_alpha_beta);
  bad.alpha = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK(method_from_string("pattern_attribution") == Method::pattern_attribution);
  CHECK_THROWS_AS(method_from_string("smoothgrad"), ConfigError);
}

}  // TEST_SUITE
