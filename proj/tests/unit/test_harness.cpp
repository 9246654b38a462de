#include <doctest.h>

#include <fstream>
#include <iterator>
#include <sstream>

#include "xaibench/errors.hpp"
#include "xaibench/harness.hpp"
#include "xaibench/png_io.hpp"
#include "xaibench/render.hpp"
#include "xaibench/synthgen.hpp"
#include "test_util.hpp"

using namespace xb;
using namespace xb::harness;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::uint32_t be32(const std::string& s, std::size_t at) {
  std::uint32_t v = 0;
  for (std::size_t k = 0; k < 4; ++k) v = (v << 8) | static_cast<unsigned char>(s[at + k]);
  return v;
}

/// Small, fast experiment: 64 x 64 images, a handful of samples.
std::vector<ConfigEntry> tiny(const fs::path& out) {
  return {{"experiment", "out", out.string()},  {"dataset", "train_size", "24"},
          {"dataset", "val_size", "8"},         {"dataset", "holdout_size", "24"},
          {"train", "max_epochs", "1"},         {"train", "runs", "1"},
          {"train", "batch_size", "8"},         {"explain", "methods", "gradient"},
          {"explain", "pattern_samples", "8"},  {"evaluate", "count", "10"}};
}

int cli(std::vector<std::string> args, std::string* out = nullptr, std::string* err = nullptr) {
  args.insert(args.begin(), "xaibench");
  std::vector<const char*> argv;
  for (auto& a : args) argv.push_back(a.c_str());
  std::ostringstream o, e;
  const int rc = run_cli(static_cast<int>(argv.size()), argv.data(), o, e);
  if (out) *out = o.str();
  if (err) *err = e.str();
  return rc;
}

MontageRow row(int label, std::uint64_t seed, int methods) {
  MontageRow r;
  r.label = "class " + std::to_string(label);
  r.input = synth::perlin_field(seed, {5, 8}, {64, 64});
  r.ground_truth = Mask::Zero(64, 64);
  if (label == 2) r.ground_truth.block(10, 10, 5, 5).setOnes();
  for (int m = 0; m < methods; ++m) r.heatmaps.push_back(r.input.array() - 0.5f * m);
  return r;
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("sha256") {
  CHECK(sha256_hex("abc") ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("") ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("presets and precedence") {
  const auto desk = ExperimentConfig::preset(Scale::desk);
  CHECK(desk.dataset.image_shape == Shape{64, 64});
  CHECK(desk.hp.max_epochs == 60);
  CHECK(desk.architecture().block_filters == std::vector<int>{32, 64});
  CHECK(desk.methods.size() == 8);
  CHECK(desk.eval_count == 200);

  const auto paper = resolve_config(Scale::desk, {{"experiment", "scale", "paper"}});
  CHECK(paper.dataset.split_sizes.train == 42000);
  CHECK(paper.dataset.split_sizes.val == 6000);
  CHECK(paper.dataset.split_sizes.holdout == 12000);
  CHECK(paper.hp.max_epochs == 125);
  CHECK(paper.architecture().input.height == 140);
  CHECK(paper.architecture().block_filters.size() == 4);

  const auto c = resolve_config(Scale::desk, {{"train", "runs", "2"}, {"train", "runs", "5"}});
  CHECK(c.hp.runs == 5);
  CHECK_THROWS_AS(resolve_config(Scale::desk, {{"train", "speed", "1"}}), ConfigError);
  CHECK_THROWS_AS(resolve_config(Scale::desk, {{"train", "runs", "two"}}), ConfigError);
  CHECK_THROWS_AS(resolve_config(Scale::desk, {{"explain", "methods", "gradient,gradient"}}),
                  ConfigError);
}

TEST_CASE("config files") {
  test::TempDir tmp;
  std::ofstream(tmp.path() / "c.ini") << "; comment\n[experiment]\nseed = 9\n"
                                         "[explain]\nmethods = lrp_z, deconvnet\n"
                                         "[evaluate]\ntransform = pos\n";
  const auto c = resolve_config(Scale::desk, read_config_file(tmp.path() / "c.ini"));
  CHECK(c.seed == 9);
  CHECK(c.methods.size() == 2);
  CHECK(c.transform == metrics::ScoreTransform::pos);
}

TEST_CASE("command line") {
  std::string out, err;
  CHECK(cli({"--help"}, &out) == 0);
  for (const auto& k : config_keys())
    CHECK(out.find("--" + k.section + "." + k.key) != std::string::npos);
  for (const char* f : {"--seed", "--scale", "--out", "--methods", "--transform", "--config"})
    CHECK(out.find(f) != std::string::npos);
  CHECK(cli({"train", "--bogus"}, nullptr, &err) == 2);
  CHECK(cli({}, nullptr, &err) == 2);
  CHECK(cli({"frobnicate"}, nullptr, &err) == 2);
  CHECK(cli({"train", "--scale", "huge"}, nullptr, &err) == 2);

  test::TempDir tmp;
  CHECK(cli({"evaluate", "--out", (tmp.path() / "x").string()}, nullptr, &err) == 1);
  CHECK(err.find("evaluate") != std::string::npos);
  CHECK(err.find("explain") != std::string::npos);
}

TEST_CASE("pipeline, resume and report") {
  test::TempDir tmp;
  std::ostringstream log;
  Experiment exp(resolve_config(Scale::desk, tiny(tmp.path() / "run")), &log);
  const auto report = exp.run_all();
  const auto& cond = report["conditions"][0];
  CHECK(cond["name"] == "perlin");
  CHECK(cond["metrics"]["sample_count"] == 10);
  CHECK(metrics::read_metrics_csv(tmp.path() / "run" / "metrics.csv").size() == 10);
  CHECK(cond["accuracy"]["runs"].size() == 1);
  const std::string first = slurp(tmp.path() / "run" / "report.json");
  const std::string checkpoint = slurp(tmp.path() / "run" / "perlin" / "runs" / "0" / "checkpoint.bin");

  std::ostringstream again;
  Experiment(resolve_config(Scale::desk, tiny(tmp.path() / "run")), &again).run_all();
  CHECK(again.str().find("epoch") == std::string::npos);
  CHECK(again.str().find("[train] perlin: up to date") != std::string::npos);
  CHECK(slurp(tmp.path() / "run" / "report.json") == first);

  // A damaged output reruns its stage and everything downstream, reproducing it.
  const fs::path metrics = tmp.path() / "run" / "perlin" / "metrics.csv";
  std::ofstream(metrics, std::ios::app) << "tampered\n";
  std::ostringstream repair;
  Experiment(resolve_config(Scale::desk, tiny(tmp.path() / "run")), &repair).run_all();
  CHECK(repair.str().find("[evaluate] perlin gradient") != std::string::npos);
  CHECK(slurp(tmp.path() / "run" / "report.json") == first);
  CHECK(slurp(tmp.path() / "run" / "perlin" / "runs" / "0" / "checkpoint.bin") == checkpoint);

  // A second directory gives the same bytes.
  Experiment(resolve_config(Scale::desk, tiny(tmp.path() / "copy"))).run_all();
  CHECK(slurp(tmp.path() / "copy" / "report.json") == first);

  // Changing an evaluation setting reruns only evaluation and report.
  auto entries = tiny(tmp.path() / "run");
  entries.push_back({"evaluate", "transform", "raw"});
  std::ostringstream changed;
  Experiment(resolve_config(Scale::desk, entries), &changed).run_all();
  CHECK(changed.str().find("[explain] perlin: up to date") != std::string::npos);
  CHECK(slurp(tmp.path() / "run" / "report.json") != first);
}

TEST_CASE("paired conditions share ground truth") {
  test::TempDir tmp;
  const fs::path bg = tmp.path() / "backgrounds";
  fs::create_directories(bg);
  for (int k = 0; k < 8; ++k) {
    const Image img = synth::perlin_field(500 + k, {3, 3}, {64, 64});
    write_png_gray(bg / ("b" + std::to_string(k) + ".png"),
                   (img.array() * 255.0f).round().cast<std::uint8_t>().matrix());
    write_png_gray(bg / ("b" + std::to_string(k) + "_mask.png"),
                   (synth::default_mask({64, 64}).array() * 255).matrix());
  }
  auto entries = tiny(tmp.path() / "run");
  entries.push_back({"experiment", "background_dir", bg.string()});
  Experiment exp(resolve_config(Scale::desk, entries));
  exp.generate();
  for (const char* split : {"train", "val", "holdout"}) {
    const std::string name = std::string(split) + "_ground_truth.ten";
    const std::string a = slurp(tmp.path() / "run" / "perlin" / "dataset" / name);
    CHECK(!a.empty());
    CHECK(a == slurp(tmp.path() / "run" / "file" / "dataset" / name));
  }
  CHECK(slurp(tmp.path() / "run" / "perlin" / "dataset" / "train_images.ten") !=
        slurp(tmp.path() / "run" / "file" / "dataset" / "train_images.ten"));
}

TEST_CASE("montage layout") {
  test::TempDir tmp;
  const std::vector<MontageRow> rows{row(1, 1, 8), row(2, 2, 8), row(1, 3, 8), row(2, 4, 8)};
  const Shape s = render_montage(tmp.path() / "m.png", rows);
  CHECK(s == Shape{4 * 64, 10 * 64});
  const std::string png = slurp(tmp.path() / "m.png");
  CHECK(be32(png, 16) == 640);
  CHECK(be32(png, 20) == 256);
  render_montage(tmp.path() / "n.png", rows);
  CHECK(slurp(tmp.path() / "n.png") == png);

  const auto rgb = montage_rgb(rows);
  // ground-truth tile of a class-1 row is entirely background
  CHECK(rgb.block(0, 64 * 3, 64, 64 * 3).isZero(0));
  CHECK(rgb.block(64, 64 * 3, 64, 64 * 3).cast<int>().sum() > 0);

  CHECK(diverging_color(0) == std::array<std::uint8_t, 3>{255, 255, 255});
  CHECK(diverging_color(1)[0] > diverging_color(1)[2]);
  CHECK(diverging_color(-1)[2] > diverging_color(-1)[0]);
}

TEST_CASE("box plots") {
  const auto b = box_stats({1, 2, 3, 4, 5, 6, 7, 8, 9, 100});
  CHECK(b.median == doctest::Approx(5.5));
  CHECK(b.q1 == doctest::Approx(3.25));
  CHECK(b.q3 == doctest::Approx(7.75));
  CHECK(b.whisker_high == 9);
  CHECK(b.outliers == std::vector<double>{100});

  metrics::MetricsReport r;
  for (int k = 0; k < 6; ++k) r.rows.push_back({std::to_string(k), "flat", 0.7, 0.2, 0.1, false});
  r.aggregate();
  const std::string svg = boxplot_svg(r, "t");
  CHECK(svg.find("data-median=\"0.7\"") != std::string::npos);
  CHECK(svg.find("data-metric=\"PREC99\"") != std::string::npos);

  metrics::MetricsReport few;
  few.rows.push_back({"0", "m", 0.5, 0.5, 0.5, false});
  few.aggregate();
  CHECK_THROWS_AS(boxplot_svg(few, "t"), MetricError);
}

}  // TEST_SUITE
