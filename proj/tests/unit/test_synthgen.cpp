#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>

#include "xaibench/errors.hpp"
#include "xaibench/rng.hpp"
#include "xaibench/synthgen.hpp"
#include "test_util.hpp"

using namespace xb;
using namespace xb::synth;

namespace {

// Gradient noise written as a tensor-product sum over the four corners,
// with hat weights 1 - fade(|t|): a different route to the same field.
double oracle_noise(const std::vector<double>& angles, int lattice_cols, double y, double x,
                    int grid_rows, int grid_cols) {
  auto fade = [](double t) { return t * t * t * (t * (t * 6 - 15) + 10); };
  int cy = static_cast<int>(std::floor(y));
  int cx = static_cast<int>(std::floor(x));
  if (cy > grid_rows - 1) cy = grid_rows - 1;
  if (cx > grid_cols - 1) cx = grid_cols - 1;
  double sum = 0;
  for (int r = cy; r <= cy + 1; ++r) {
    for (int c = cx; c <= cx + 1; ++c) {
      const double dy = y - r, dx = x - c;
      const double a = angles[static_cast<std::size_t>(r * lattice_cols + c)];
      const double wy = 1.0 - fade(std::abs(dy));
      const double wx = 1.0 - fade(std::abs(dx));
      sum += wy * wx * (std::cos(a) * dx + std::sin(a) * dy);
    }
  }
  return sum;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_SUITE("synthgen") {

TEST_CASE("perlin field matches a brute-force reimplementation") {
  const PerlinGrid grid{2, 2};
  const Shape shape{8, 8};
  Rng rng(7);
  std::vector<double> angles;
  for (int k = 0; k < 9; ++k) angles.push_back(2.0 * std::numbers::pi * rng.uniform());

  const auto raw = perlin_raw(7, grid, shape);
  Raster<double> expect(8, 8);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j)
      expect(i, j) = oracle_noise(angles, 3, i * 2.0 / 8, j * 2.0 / 8, 2, 2);
  CHECK((raw - expect).cwiseAbs().maxCoeff() < 1e-6);

  const double lo = expect.minCoeff(), hi = expect.maxCoeff();
  const Image norm = perlin_field(7, grid, shape);
  CHECK((norm.cast<double>() - ((expect.array() - lo) / (hi - lo)).matrix()).cwiseAbs().maxCoeff() <
        1e-6);
}

TEST_CASE("perlin values vanish at lattice nodes and normalize to [0, 1]") {
  const auto raw = perlin_raw(99, {5, 8}, {64, 64});
  // Node rows fall on pixel rows whose coordinate is an integer: 64 * k / 5 is
  // integral only at k = 0; columns 0, 8, 16, ... are nodes.
  for (int j = 0; j < 64; j += 8) CHECK(std::abs(raw(0, j)) < 1e-12);
  const Image img = perlin_field(99, {5, 8}, {64, 64});
  CHECK(img.minCoeff() == 0.0f);
  CHECK(img.maxCoeff() == 1.0f);
  CHECK_THROWS_AS(perlin_raw(1, {0, 3}, {64, 64}), ConfigError);
  CHECK_THROWS_AS(perlin_raw(1, {5, 8}, {4, 64}), ConfigError);
}

TEST_CASE("radial hamming profile") {
  CHECK(radial_hamming(0.0, 5.0) == doctest::Approx(1.0));
  CHECK(radial_hamming(5.0, 5.0) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(radial_hamming(2.5, 5.0) == doctest::Approx((0.54 - 0.08) / 0.92));
  CHECK(radial_hamming(2.5, 5.0) == doctest::Approx(0.5));
  CHECK(radial_hamming(6.0, 5.0) == 0.0);
}

TEST_CASE("ellipse masks") {
  // Disc of radius 2 on the integer grid: 1 + 4 * (2 + 1) = 13 points.
  const Mask m = ellipse_mask({8, 8}, {4, 4}, {2, 2});
  int count = 0;
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) count += ((r - 4) * (r - 4) + (c - 4) * (c - 4) <= 4);
  CHECK(count == 13);
  CHECK(m.cast<int>().sum() == 13);

  CHECK(ellipse_mask({8, 8}, {3.5, 3.5}, {8, 8}).cast<int>().sum() == 64);
  const Mask edge = ellipse_mask({8, 8}, {0, 0}, {3, 3});
  CHECK(edge.cast<int>().sum() > 0);
  CHECK_NOTHROW(validate_mask(edge));

  const Mask def = default_mask({64, 64});
  const double frac = def.cast<double>().mean();
  CHECK(frac == doctest::Approx(0.6).epsilon(0.03));
  CHECK_THROWS_AS(validate_mask(Mask::Zero(8, 8)), ConfigError);
}

TEST_CASE("lesion maps") {
  const Mask mask = default_mask({64, 64});
  const LesionSpec spec;
  const auto layout = lesion_map(1234, mask, spec);
  REQUIRE(layout.centers.size() == 2);
  for (const auto& c : layout.centers) {
    CHECK(layout.map(c.x(), c.y()) == doctest::Approx(0.7));
    CHECK(c.x() + 5 < 32);
  }
  CHECK(layout.map.minCoeff() == doctest::Approx(0.7));
  // ground truth is exactly the set where the map is below one
  CHECK(((layout.map.array() < 1.0).cast<std::uint8_t>().matrix() == layout.ground_truth));
  // no lesion pixels outside the top half or the mask
  CHECK(layout.ground_truth.bottomRows(32).cast<int>().sum() == 0);
  CHECK((layout.ground_truth.array() * (1 - mask.array())).cast<int>().sum() == 0);
  // each component close to pi * 25
  const double area = layout.ground_truth.cast<double>().sum() / 2.0;
  CHECK(area == doctest::Approx(std::numbers::pi * 25).epsilon(0.15));

  const auto again = lesion_map(1234, mask, spec);
  CHECK(again.ground_truth == layout.ground_truth);

  LesionSpec none = spec;
  none.count = 0;
  const auto unit = lesion_map(5, mask, none);
  CHECK(unit.map.isOnes());
  CHECK(unit.ground_truth.isZero());

  Mask tiny = Mask::Zero(64, 64);
  tiny.block(40, 40, 10, 10).setOnes();
  CHECK_THROWS_AS(lesion_map(5, tiny, spec), GenerationError);
}

TEST_CASE("samples combine background, lesions and mask") {
  const Shape shape{64, 64};
  const Mask mask = default_mask(shape);
  const Image bg = perlin_field(3, {5, 8}, shape);
  const auto s1 = make_sample(1, bg, mask, LesionSpec{}, 11, 3);
  CHECK(s1.image == (bg.array() * mask.cast<float>().array()).matrix());
  CHECK(s1.ground_truth.isZero());

  const auto s2 = make_sample(2, bg, mask, LesionSpec{}, 11, 3);
  const auto layout = lesion_map(11, mask, LesionSpec{});
  CHECK(s2.ground_truth == layout.ground_truth);
  for (const auto& c : layout.centers)
    CHECK(s2.image(c.x(), c.y()) == doctest::Approx(0.7 * bg(c.x(), c.y())).epsilon(1e-6));
  for (int r = 0; r < 64; ++r)
    for (int c = 0; c < 64; ++c)
      if (!mask(r, c)) CHECK(s2.image(r, c) == 0.0f);

  // lesion ground truth does not depend on the background
  const Image other = perlin_field(4, {5, 8}, shape);
  CHECK(make_sample(2, other, mask, LesionSpec{}, 11, 4).ground_truth == s2.ground_truth);
}

TEST_CASE("split sizes and balance") {
  const auto paper = DatasetConfig::paper_scale();
  CHECK(paper.split_sizes.train == 42000);
  CHECK(paper.split_sizes.val == 6000);
  CHECK(paper.split_sizes.holdout == 12000);
  CHECK(paper.image_shape == Shape{140, 192});

  const auto desk = DatasetConfig::desk_scale();
  const DatasetPlan plan(desk, 0);
  REQUIRE(plan.size(SplitId::train) == 2000);
  int positives = 0;
  for (std::size_t k = 0; k < 2000; ++k) positives += plan.recipe(SplitId::train, k).label == 2;
  CHECK(positives == 1000);
}

TEST_CASE("dataset files are deterministic") {
  test::TempDir tmp;
  auto cfg = DatasetConfig::desk_scale();
  cfg.split_sizes = {12, 6, 8};
  build_dataset(cfg, tmp.path() / "a");
  build_dataset(cfg, tmp.path() / "b");
  for (const auto& e : std::filesystem::directory_iterator(tmp.path() / "a"))
    CHECK(slurp(e.path()) == slurp(tmp.path() / "b" / e.path().filename()));

  const Dataset ds(tmp.path() / "a");
  CHECK(ds.train().size() == 12);
  CHECK(ds.holdout().size() == 8);
  const auto mem = generate_split(cfg, SplitId::holdout);
  for (std::size_t k = 0; k < 8; ++k) {
    CHECK(ds.holdout().label(k) == mem[k].label);
    CHECK(ds.holdout().image(k) == mem[k].image);
    CHECK(ds.holdout().ground_truth(k) == mem[k].ground_truth);
  }
}

}  // TEST_SUITE
