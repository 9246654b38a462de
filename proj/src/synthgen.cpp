#include "xaibench/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "xaibench/errors.hpp"
#include "xaibench/png_io.hpp"
#include "xaibench/rng.hpp"

namespace xb::synth {
namespace {

double fade(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

void check_shape(Shape shape) {
  if (shape.height < 8 || shape.width < 8)
    throw ConfigError("image shape must be at least 8 x 8, got " +
                      std::to_string(shape.height) + " x " +
                      std::to_string(shape.width));
}

constexpr auto kLesionStream = stream_tag("lesion");
constexpr auto kBackgroundStream = stream_tag("background");
constexpr auto kLabelStream = stream_tag("labels");
constexpr auto kArchiveStream = stream_tag("archive");

}  // namespace

// --- backgrounds ------------------------------------------------------------

Raster<double> perlin_raw(std::uint64_t seed, PerlinGrid grid, Shape shape) {
  if (grid.rows < 1 || grid.cols < 1)
    throw ConfigError("Perlin grid must have at least one cell per axis");
  check_shape(shape);

  const int lattice_rows = grid.rows + 1;
  const int lattice_cols = grid.cols + 1;
  Raster<double> gx(lattice_rows, lattice_cols), gy(lattice_rows, lattice_cols);
  Rng rng(seed);
  for (int r = 0; r < lattice_rows; ++r) {
    for (int c = 0; c < lattice_cols; ++c) {
      const double angle = 2.0 * std::numbers::pi * rng.uniform();
      gx(r, c) = std::cos(angle);
      gy(r, c) = std::sin(angle);
    }
  }

  auto corner = [&](int r, int c, double dx, double dy) {
    return gx(r, c) * dx + gy(r, c) * dy;
  };

  Raster<double> field(shape.height, shape.width);
  for (int i = 0; i < shape.height; ++i) {
    const double y = static_cast<double>(i) * grid.rows / shape.height;
    const int cy = std::min(static_cast<int>(y), grid.rows - 1);
    const double fy = y - cy;
    const double v = fade(fy);
    for (int j = 0; j < shape.width; ++j) {
      const double x = static_cast<double>(j) * grid.cols / shape.width;
      const int cx = std::min(static_cast<int>(x), grid.cols - 1);
      const double fx = x - cx;
      const double u = fade(fx);
      const double n00 = corner(cy, cx, fx, fy);
      const double n01 = corner(cy, cx + 1, fx - 1.0, fy);
      const double n10 = corner(cy + 1, cx, fx, fy - 1.0);
      const double n11 = corner(cy + 1, cx + 1, fx - 1.0, fy - 1.0);
      const double top = n00 + u * (n01 - n00);
      const double bottom = n10 + u * (n11 - n10);
      field(i, j) = top + v * (bottom - top);
    }
  }
  return field;
}

Image normalize_minmax(const Raster<double>& raw) {
  if (!raw.allFinite()) throw GenerationError("background contains NaN/Inf");
  const double lo = raw.minCoeff();
  const double hi = raw.maxCoeff();
  if (!(hi > lo)) throw GenerationError("cannot normalize a constant background");
  return ((raw.array() - lo) / (hi - lo)).cast<float>().matrix();
}

Image perlin_field(std::uint64_t seed, PerlinGrid grid, Shape shape) {
  return normalize_minmax(perlin_raw(seed, grid, shape));
}

// --- lesions ----------------------------------------------------------------

double radial_hamming(double d, double radius) {
  if (d > radius) return 0.0;
  return (0.54 + 0.46 * std::cos(std::numbers::pi * d / radius) - 0.08) / 0.92;
}

void LesionSpec::validate() const {
  if (!(intensity > 0.0 && intensity < 1.0))
    throw ConfigError("lesion intensity must lie in (0, 1)");
  if (!(diameter >= 3.0)) throw ConfigError("lesion diameter must be >= 3");
  if (count < 1) throw ConfigError("lesion count must be >= 1");
}

LesionLayout lesion_map(std::uint64_t lesion_seed, const Mask& mask,
                        const LesionSpec& spec) {
  const Shape shape = shape_of(mask);
  LesionLayout out;
  out.map = LesionMap::Ones(shape.height, shape.width);
  out.ground_truth = Mask::Zero(shape.height, shape.width);
  if (spec.count == 0) return out;
  spec.validate();

  const double radius = spec.diameter / 2.0;
  const int reach = static_cast<int>(std::ceil(radius));
  const int top_rows = shape.height / 2;

  auto disc_fits = [&](int cr, int cc) {
    for (int dr = -reach; dr <= reach; ++dr) {
      for (int dc = -reach; dc <= reach; ++dc) {
        if (std::hypot(dr, dc) > radius) continue;
        const int r = cr + dr, c = cc + dc;
        if (r < 0 || r >= top_rows || c < 0 || c >= shape.width) return false;
        if (mask(r, c) == 0) return false;
      }
    }
    return true;
  };

  Rng rng(lesion_seed);
  for (int lesion = 0; lesion < spec.count; ++lesion) {
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
      const int cr = static_cast<int>(rng.below(static_cast<std::uint64_t>(std::max(top_rows, 1))));
      const int cc = static_cast<int>(rng.below(static_cast<std::uint64_t>(shape.width)));
      const bool separated = std::all_of(
          out.centers.begin(), out.centers.end(), [&](const Eigen::Vector2i& p) {
            return std::hypot(p.x() - cr, p.y() - cc) >= spec.diameter;
          });
      if (separated && disc_fits(cr, cc)) {
        out.centers.emplace_back(cr, cc);
        placed = true;
      }
    }
    if (!placed)
      throw GenerationError("lesion placement infeasible for lesion seed " +
                            std::to_string(lesion_seed) + " (lesion " +
                            std::to_string(lesion + 1) + " of " +
                            std::to_string(spec.count) + ")");
  }

  for (const auto& c : out.centers) {
    for (int dr = -reach; dr <= reach; ++dr) {
      for (int dc = -reach; dc <= reach; ++dc) {
        const int r = c.x() + dr, col = c.y() + dc;
        if (r < 0 || r >= shape.height || col < 0 || col >= shape.width) continue;
        const double w = radial_hamming(std::hypot(dr, dc), radius);
        if (w <= 0.0) continue;
        out.map(r, col) = std::min(out.map(r, col), 1.0 - spec.intensity * w);
      }
    }
  }
  out.ground_truth = (out.map.array() < 1.0).cast<std::uint8_t>().matrix();
  return out;
}

// --- masks ------------------------------------------------------------------

Mask ellipse_mask(Shape shape, Eigen::Vector2d center, Eigen::Vector2d semi_axes) {
  if (shape.height < 1 || shape.width < 1)
    throw ConfigError("ellipse mask needs a nonempty raster");
  if (!(semi_axes.x() > 0.0 && semi_axes.y() > 0.0))
    throw ConfigError("ellipse semi-axes must be positive");
  Mask m(shape.height, shape.width);
  for (int r = 0; r < shape.height; ++r) {
    for (int c = 0; c < shape.width; ++c) {
      const double dy = (r - center.x()) / semi_axes.x();
      const double dx = (c - center.y()) / semi_axes.y();
      m(r, c) = dy * dy + dx * dx <= 1.0 ? 1 : 0;
    }
  }
  if (m.cast<int>().sum() == 0)
    throw ConfigError("ellipse does not intersect the raster");
  return m;
}

Mask default_mask(Shape shape) {
  // pi * k^2 / 4 = 0.6  =>  k = sqrt(2.4 / pi)
  const double k = std::sqrt(2.4 / std::numbers::pi);
  return ellipse_mask(shape, {(shape.height - 1) / 2.0, (shape.width - 1) / 2.0},
                      {k * shape.height / 2.0, k * shape.width / 2.0});
}

void validate_mask(const Mask& mask) {
  if ((mask.array() > 1).any()) throw ConfigError("mask values must be 0 or 1");
  const auto set = mask.cast<long>().sum();
  if (set * 100 < static_cast<long>(mask.size()))
    throw ConfigError("mask must cover at least 1% of the raster");
}

// --- samples ----------------------------------------------------------------

Sample make_sample(int label, const Image& background, const Mask& mask,
                   const LesionSpec& spec, std::uint64_t lesion_seed,
                   std::uint64_t background_seed) {
  if (label != 1 && label != 2) throw ConfigError("class label must be 1 or 2");
  if (shape_of(background) != shape_of(mask))
    throw ShapeError("background and mask shapes differ");
  LesionSpec effective = spec;
  if (label == 1) effective.count = 0;
  LesionLayout layout = lesion_map(lesion_seed, mask, effective);

  Sample s;
  s.label = label;
  s.lesion_seed = lesion_seed;
  s.background_seed = background_seed;
  s.image = (background.cast<double>().array() * layout.map.array() *
             mask.cast<double>().array())
                .cast<float>()
                .matrix();
  s.ground_truth = std::move(layout.ground_truth);
  return s;
}

// --- archive ----------------------------------------------------------------

BackgroundArchive BackgroundArchive::load(const std::filesystem::path& dir,
                                          Shape shape) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir))
    throw IoError("background archive is not a directory: " + dir.string());
  std::vector<fs::path> images;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto& p = entry.path();
    if (p.extension() != ".png") continue;
    const auto stem = p.stem().string();
    if (stem.size() >= 5 && stem.ends_with("_mask")) continue;
    images.push_back(p);
  }
  std::sort(images.begin(), images.end());

  BackgroundArchive archive;
  for (const auto& p : images) {
    const auto mask_path = p.parent_path() / (p.stem().string() + "_mask.png");
    if (!fs::exists(mask_path))
      throw IoError("missing mask for background " + p.string());
    const GrayPng bg = read_png_gray(p);
    const GrayPng mk = read_png_gray(mask_path);
    if (shape_of(bg.pixels) != shape || shape_of(mk.pixels) != shape)
      throw ShapeError("archive entry " + p.filename().string() +
                       " does not match the configured image shape");
    const Raster<double> scaled = bg.pixels.cast<double>() / bg.max_code();
    Mask mask = (mk.pixels.array() > 0).cast<std::uint8_t>().matrix();
    validate_mask(mask);
    archive.names.push_back(p.stem().string());
    archive.images.push_back(normalize_minmax(scaled));
    archive.masks.push_back(std::move(mask));
  }
  if (archive.images.empty())
    throw IoError("background archive contains no PNG files: " + dir.string());
  return archive;
}

std::string to_string(BackgroundKind kind) {
  return kind == BackgroundKind::perlin ? "perlin" : "file";
}

BackgroundKind background_kind_from_string(const std::string& s) {
  if (s == "perlin") return BackgroundKind::perlin;
  if (s == "file") return BackgroundKind::file;
  throw ConfigError("unknown background kind '" + s + "' (perlin|file)");
}

std::string to_string(SplitId split) {
  switch (split) {
    case SplitId::train: return "train";
    case SplitId::val: return "val";
    case SplitId::holdout: return "holdout";
  }
  return "?";
}

int SplitSizes::operator[](SplitId s) const {
  switch (s) {
    case SplitId::train: return train;
    case SplitId::val: return val;
    case SplitId::holdout: return holdout;
  }
  return 0;
}

// --- config -----------------------------------------------------------------

void DatasetConfig::validate() const {
  check_shape(image_shape);
  if (perlin_grid.rows < 1 || perlin_grid.cols < 1)
    throw ConfigError("Perlin grid must have at least one cell per axis");
  for (SplitId s : kSplits) {
    const int n = split_sizes[s];
    if (n <= 0) throw ConfigError(to_string(s) + " split size must be positive");
    if (n % 2 != 0)
      throw ConfigError(to_string(s) + " split size must be even for exact class balance");
  }
  lesion.validate();
  if (background == BackgroundKind::file && !archive)
    throw ConfigError("file backgrounds require a background archive");
}

DatasetConfig DatasetConfig::paper_scale() {
  DatasetConfig c;
  c.image_shape = {140, 192};
  c.split_sizes = {42000, 6000, 12000};
  return c;
}

DatasetConfig DatasetConfig::desk_scale() {
  DatasetConfig c;
  c.image_shape = {64, 64};
  c.split_sizes = {2000, 500, 1000};
  return c;
}

void to_json(nlohmann::json& j, const DatasetConfig& c) {
  j = nlohmann::json{
      {"background", to_string(c.background)},
      {"perlin_grid", {c.perlin_grid.rows, c.perlin_grid.cols}},
      {"image_shape", {c.image_shape.height, c.image_shape.width}},
      {"split_sizes",
       {{"train", c.split_sizes.train},
        {"val", c.split_sizes.val},
        {"holdout", c.split_sizes.holdout}}},
      {"lesion",
       {{"diameter", c.lesion.diameter},
        {"intensity", c.lesion.intensity},
        {"count", c.lesion.count}}},
      {"master_seed", c.master_seed},
      {"archive", c.archive ? nlohmann::json(c.archive->string()) : nlohmann::json()}};
}

void from_json(const nlohmann::json& j, DatasetConfig& c) {
  c.background = background_kind_from_string(j.at("background").get<std::string>());
  c.perlin_grid = {j.at("perlin_grid").at(0).get<int>(),
                   j.at("perlin_grid").at(1).get<int>()};
  c.image_shape = {j.at("image_shape").at(0).get<int>(),
                   j.at("image_shape").at(1).get<int>()};
  const auto& s = j.at("split_sizes");
  c.split_sizes = {s.at("train").get<int>(), s.at("val").get<int>(),
                   s.at("holdout").get<int>()};
  const auto& l = j.at("lesion");
  c.lesion = {l.at("diameter").get<double>(), l.at("intensity").get<double>(),
              l.at("count").get<int>()};
  c.master_seed = j.at("master_seed").get<std::uint64_t>();
  if (j.contains("archive") && !j.at("archive").is_null())
    c.archive = j.at("archive").get<std::string>();
  else
    c.archive.reset();
}

// --- plan & generation ------------------------------------------------------

DatasetPlan::DatasetPlan(const DatasetConfig& config, std::size_t archive_size) {
  // Archive entries are shuffled once and partitioned across splits in
  // proportion to split size, so no background is shared between splits.
  std::array<std::vector<int>, 3> partitions;
  if (config.archive) {
    std::vector<int> order(archive_size);
    for (std::size_t i = 0; i < archive_size; ++i) order[i] = static_cast<int>(i);
    Rng rng(derive_seed(config.master_seed, kArchiveStream));
    shuffle(order.begin(), order.end(), rng);
    const double total = config.split_sizes.train + config.split_sizes.val +
                         config.split_sizes.holdout;
    std::size_t begin = 0;
    for (SplitId s : kSplits) {
      const auto i = static_cast<int>(s);
      std::size_t n = (s == SplitId::holdout)
                          ? archive_size - begin
                          : static_cast<std::size_t>(std::floor(
                                archive_size * (config.split_sizes[s] / total)));
      if (n == 0)
        throw GenerationError(
            "background archive too small: " + std::to_string(archive_size) +
            " entries cannot cover the " + to_string(s) + " split");
      partitions[i].assign(order.begin() + static_cast<long>(begin),
                           order.begin() + static_cast<long>(begin + n));
      begin += n;
    }
  }

  for (SplitId s : kSplits) {
    const auto i = static_cast<int>(s);
    const auto n = static_cast<std::size_t>(config.split_sizes[s]);
    std::vector<int> labels(n, 1);
    std::fill(labels.begin() + static_cast<long>(n / 2), labels.end(), 2);
    Rng rng(derive_seed(config.master_seed, kLabelStream,
                        static_cast<std::uint64_t>(i)));
    shuffle(labels.begin(), labels.end(), rng);

    auto& recipes = recipes_[i];
    recipes.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      auto& r = recipes[k];
      r.label = labels[k];
      r.lesion_seed = derive_seed(config.master_seed, kLesionStream,
                                  static_cast<std::uint64_t>(i), k);
      r.background_seed = derive_seed(config.master_seed, kBackgroundStream,
                                      static_cast<std::uint64_t>(i), k);
      if (config.archive)
        r.archive_index = partitions[i][k % partitions[i].size()];
    }
  }
}

const SampleRecipe& DatasetPlan::recipe(SplitId split, std::size_t index) const {
  return recipes_[static_cast<int>(split)].at(index);
}

std::size_t DatasetPlan::size(SplitId split) const {
  return recipes_[static_cast<int>(split)].size();
}

Sample generate_sample(const DatasetConfig& config, const SampleRecipe& recipe,
                       const BackgroundArchive* archive) {
  Mask mask;
  Image background;
  if (config.archive) {
    if (!archive) throw ConfigError("dataset config names an archive but none was loaded");
    mask = archive->masks.at(static_cast<std::size_t>(recipe.archive_index));
  } else {
    mask = default_mask(config.image_shape);
  }
  if (config.background == BackgroundKind::file) {
    background = archive->images.at(static_cast<std::size_t>(recipe.archive_index));
  } else {
    background = perlin_field(recipe.background_seed, config.perlin_grid,
                              config.image_shape);
  }
  return make_sample(recipe.label, background, mask, config.lesion,
                     recipe.lesion_seed, recipe.background_seed);
}

std::vector<Sample> generate_split(const DatasetConfig& config, SplitId split,
                                   const BackgroundArchive* archive) {
  config.validate();
  DatasetPlan plan(config, archive ? archive->size() : 0);
  std::vector<Sample> out;
  out.reserve(plan.size(split));
  for (std::size_t k = 0; k < plan.size(split); ++k)
    out.push_back(generate_sample(config, plan.recipe(split, k), archive));
  return out;
}

// --- files ------------------------------------------------------------------

std::filesystem::path split_file(const std::filesystem::path& dir, SplitId split,
                                 const std::string& role) {
  return dir / (to_string(split) + "_" + role + ".ten");
}

Split::Split(const std::filesystem::path& dir, SplitId id, Shape shape)
    : id_(id),
      shape_(shape),
      images_(split_file(dir, id, "images")),
      ground_truth_(split_file(dir, id, "ground_truth")),
      masks_(split_file(dir, id, "masks")) {
  const TenArray labels = load_ten(split_file(dir, id, "labels"));
  if (labels.type != TenType::u8) throw IoError("labels tensor must be u8");
  labels_ = labels.u8;
  const auto pixels = static_cast<std::size_t>(shape.pixels());
  if (images_.rows() != labels_.size() || images_.row_size() != pixels ||
      ground_truth_.rows() != labels_.size() || ground_truth_.row_size() != pixels ||
      masks_.rows() != labels_.size() || masks_.row_size() != pixels)
    throw ShapeError("tensor files of split " + to_string(id) + " are inconsistent");
}

Image Split::image(std::size_t k) const {
  Image img(shape_.height, shape_.width);
  images_.copy_row(k, {img.data(), static_cast<std::size_t>(img.size())});
  return img;
}

Mask Split::ground_truth(std::size_t k) const {
  Mask m(shape_.height, shape_.width);
  ground_truth_.copy_row(k, {m.data(), static_cast<std::size_t>(m.size())});
  return m;
}

Mask Split::mask(std::size_t k) const {
  Mask m(shape_.height, shape_.width);
  masks_.copy_row(k, {m.data(), static_cast<std::size_t>(m.size())});
  return m;
}

Dataset::Dataset(const std::filesystem::path& dir) : dir_(dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("missing manifest.json in " + dir.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest.json in " + dir.string() + ": " + e.what());
  }
  if (manifest.value("format_version", 0) != kDatasetFormatVersion)
    throw IoError("unsupported dataset format version in " + dir.string());
  config_ = manifest.at("config").get<DatasetConfig>();
  for (SplitId s : kSplits) splits_.emplace_back(dir, s, config_.image_shape);
}

Dataset build_dataset(const DatasetConfig& config,
                      const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  config.validate();
  std::optional<BackgroundArchive> archive;
  if (config.archive) archive = BackgroundArchive::load(*config.archive, config.image_shape);
  const BackgroundArchive* archive_ptr = archive ? &*archive : nullptr;
  DatasetPlan plan(config, archive ? archive->size() : 0);

  fs::create_directories(dir);
  const auto h = static_cast<std::uint32_t>(config.image_shape.height);
  const auto w = static_cast<std::uint32_t>(config.image_shape.width);

  nlohmann::json splits = nlohmann::json::object();
  for (SplitId s : kSplits) {
    const auto n = static_cast<std::uint32_t>(plan.size(s));
    TenWriter images(split_file(dir, s, "images"), {n, h, w}, TenType::f32);
    TenWriter truth(split_file(dir, s, "ground_truth"), {n, h, w}, TenType::u8);
    TenWriter masks(split_file(dir, s, "masks"), {n, h, w}, TenType::u8);
    std::vector<std::uint8_t> labels(n);
    std::vector<std::uint64_t> lesion_seeds(n), background_seeds(n);
    std::vector<int> archive_indices;
    const Mask fixed_mask = config.archive ? Mask() : default_mask(config.image_shape);
    for (std::uint32_t k = 0; k < n; ++k) {
      const SampleRecipe& r = plan.recipe(s, k);
      const Sample sample = generate_sample(config, r, archive_ptr);
      const Mask& mask = config.archive
                             ? archive->masks[static_cast<std::size_t>(r.archive_index)]
                             : fixed_mask;
      images.append(std::span<const float>(sample.image.data(),
                                           static_cast<std::size_t>(sample.image.size())));
      truth.append(std::span<const std::uint8_t>(
          sample.ground_truth.data(), static_cast<std::size_t>(sample.ground_truth.size())));
      masks.append(std::span<const std::uint8_t>(mask.data(),
                                                 static_cast<std::size_t>(mask.size())));
      labels[k] = static_cast<std::uint8_t>(sample.label);
      lesion_seeds[k] = r.lesion_seed;
      background_seeds[k] = r.background_seed;
      if (config.archive) archive_indices.push_back(r.archive_index);
    }
    images.close();
    truth.close();
    masks.close();
    const std::uint32_t label_dims[] = {n};
    save_ten(split_file(dir, s, "labels"), label_dims, std::span<const std::uint8_t>(labels));

    const auto class2 = static_cast<int>(std::count(labels.begin(), labels.end(), 2));
    nlohmann::json entry{
        {"count", n},
        {"class_counts", {{"1", static_cast<int>(n) - class2}, {"2", class2}}},
        {"lesion_seeds", lesion_seeds},
        {"background_seeds", background_seeds}};
    if (config.archive) entry["archive_indices"] = archive_indices;
    splits[to_string(s)] = std::move(entry);
  }

  nlohmann::json manifest{
      {"format_version", kDatasetFormatVersion},
      {"config", config},
      {"shape", {h, w}},
      {"seed_scheme", "splitmix64 counter derivation from master_seed per (stream, split, index)"},
      {"splits", std::move(splits)},
      {"tensor_files",
       {"<split>_images.ten (f32 N,H,W)", "<split>_labels.ten (u8 N)",
        "<split>_ground_truth.ten (u8 N,H,W)", "<split>_masks.ten (u8 N,H,W)"}}};
  if (archive) manifest["archive_entries"] = archive->names;
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  out << manifest.dump(1) << '\n';
  if (!out) throw IoError("cannot write manifest.json in " + dir.string());
  out.close();
  return Dataset(dir);
}

}  // namespace xb::synth
