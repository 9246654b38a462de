#pragma once

// Synthetic lesion datasets: gradient-noise or file-loaded backgrounds,
// radial-Hamming lesions placed inside (top half ∩ mask), binary ground truth.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "xaibench/raster.hpp"
#include "xaibench/ten_io.hpp"

namespace xb::synth {

/// Lattice resolution in cells; (5, 8) cells use a 6 x 9 gradient lattice.
struct PerlinGrid {
  int rows = 5;
  int cols = 8;
};

/// Gradient noise before normalization. Lattice gradients are unit vectors
/// at angles 2*pi*u, u drawn from Rng(seed) in row-major lattice order.
Raster<double> perlin_raw(std::uint64_t seed, PerlinGrid grid, Shape shape);

/// perlin_raw followed by per-image min-max normalization to [0, 1].
Image perlin_field(std::uint64_t seed, PerlinGrid grid, Shape shape);

/// Per-image min-max normalization; throws GenerationError on a constant input.
Image normalize_minmax(const Raster<double>& raw);

/// Hamming taper rescaled to 1 at the center and 0 at `radius`.
double radial_hamming(double d, double radius);

struct LesionSpec {
  double diameter = 10.0;
  double intensity = 0.3;
  int count = 2;
  void validate() const;
};

struct LesionLayout {
  LesionMap map;
  Mask ground_truth;
  std::vector<Eigen::Vector2i> centers;  // (row, col)
};

/// Rejection attempts per lesion before placement is declared infeasible.
inline constexpr int kPlacementAttempts = 10000;

/// Places spec.count disjoint lesions with centers in the top half so that
/// every pixel within `diameter / 2` of a center lies in rows [0, H/2) and in
/// the mask. spec.count == 0 yields the unit map.
LesionLayout lesion_map(std::uint64_t lesion_seed, const Mask& mask,
                        const LesionSpec& spec);

/// Pixels (r, c) with ((r-cy)/ay)^2 + ((c-cx)/ax)^2 <= 1, clipped to the raster.
Mask ellipse_mask(Shape shape, Eigen::Vector2d center, Eigen::Vector2d semi_axes);

/// Centered ellipse covering ~60% of the raster.
Mask default_mask(Shape shape);

/// Throws ConfigError unless values are binary and >= 1% of pixels are set.
void validate_mask(const Mask& mask);

struct Sample {
  Image image;
  int label = 1;  // 1: no lesion, 2: lesions
  Mask ground_truth;
  std::uint64_t lesion_seed = 0;
  std::uint64_t background_seed = 0;
};

/// image = background * lesion map * mask. Class 1 uses the unit map.
Sample make_sample(int label, const Image& background, const Mask& mask,
                   const LesionSpec& spec, std::uint64_t lesion_seed,
                   std::uint64_t background_seed);

/// Background/mask pairs loaded from `<name>.png` + `<name>_mask.png`.
struct BackgroundArchive {
  std::vector<std::string> names;
  std::vector<Image> images;  // min-max normalized
  std::vector<Mask> masks;

  static BackgroundArchive load(const std::filesystem::path& dir, Shape shape);
  std::size_t size() const { return images.size(); }
};

enum class BackgroundKind { perlin, file };

std::string to_string(BackgroundKind kind);
BackgroundKind background_kind_from_string(const std::string& s);

enum class SplitId { train = 0, val = 1, holdout = 2 };
inline constexpr std::array<SplitId, 3> kSplits = {SplitId::train, SplitId::val,
                                                   SplitId::holdout};
std::string to_string(SplitId split);

struct SplitSizes {
  int train = 2000;
  int val = 500;
  int holdout = 1000;
  int operator[](SplitId s) const;
};

struct DatasetConfig {
  BackgroundKind background = BackgroundKind::perlin;
  PerlinGrid perlin_grid{};
  Shape image_shape{64, 64};
  SplitSizes split_sizes{};
  LesionSpec lesion{};
  std::uint64_t master_seed = 1;
  /// Required for file backgrounds; for Perlin backgrounds it supplies the
  /// masks, so that both conditions share masks and lesions.
  std::optional<std::filesystem::path> archive;

  void validate() const;
  /// Shape and split sizes of the paper-scale data (140 x 192, 42000/6000/12000).
  static DatasetConfig paper_scale();
  /// 64 x 64, 2000/500/1000.
  static DatasetConfig desk_scale();
};

void to_json(nlohmann::json& j, const DatasetConfig& c);
void from_json(const nlohmann::json& j, DatasetConfig& c);

/// Per-sample recipe, a pure function of (config, split, index).
struct SampleRecipe {
  int label = 1;
  std::uint64_t lesion_seed = 0;
  std::uint64_t background_seed = 0;
  int archive_index = -1;
};

/// Labels, seeds and archive assignment for every sample of every split.
class DatasetPlan {
 public:
  DatasetPlan(const DatasetConfig& config, std::size_t archive_size);
  const SampleRecipe& recipe(SplitId split, std::size_t index) const;
  std::size_t size(SplitId split) const;

 private:
  std::array<std::vector<SampleRecipe>, 3> recipes_;
};

/// Generates one sample. `archive` must be non-null whenever config.archive is set.
Sample generate_sample(const DatasetConfig& config, const SampleRecipe& recipe,
                       const BackgroundArchive* archive);

/// In-memory generation of one split (small datasets and tests).
std::vector<Sample> generate_split(const DatasetConfig& config, SplitId split,
                                   const BackgroundArchive* archive = nullptr);

/// File-backed view of one split of a dataset directory.
class Split {
 public:
  Split(const std::filesystem::path& dir, SplitId id, Shape shape);

  SplitId id() const { return id_; }
  Shape shape() const { return shape_; }
  std::size_t size() const { return labels_.size(); }
  int label(std::size_t k) const { return labels_[k]; }
  const std::vector<std::uint8_t>& labels() const { return labels_; }
  Image image(std::size_t k) const;
  Mask ground_truth(std::size_t k) const;
  Mask mask(std::size_t k) const;

 private:
  SplitId id_;
  Shape shape_;
  std::vector<std::uint8_t> labels_;
  MappedTen images_;
  MappedTen ground_truth_;
  MappedTen masks_;
};

class Dataset {
 public:
  /// Opens a dataset directory written by build_dataset.
  explicit Dataset(const std::filesystem::path& dir);

  const DatasetConfig& config() const { return config_; }
  const Split& split(SplitId id) const { return splits_[static_cast<int>(id)]; }
  const Split& train() const { return split(SplitId::train); }
  const Split& val() const { return split(SplitId::val); }
  const Split& holdout() const { return split(SplitId::holdout); }
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  DatasetConfig config_;
  std::vector<Split> splits_;
};

inline constexpr int kDatasetFormatVersion = 1;

/// Names of the tensor files written per split, e.g. "train_images.ten".
std::filesystem::path split_file(const std::filesystem::path& dir, SplitId split,
                                 const std::string& role);

/// Generates every split, streaming samples to `dir` (manifest.json plus
/// images/labels/ground_truth/masks TEN1 files per split), then opens it.
Dataset build_dataset(const DatasetConfig& config,
                      const std::filesystem::path& dir);

}  // namespace xb::synth
