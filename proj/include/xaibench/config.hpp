#pragma once

// Experiment configuration: scale presets, an INI-style file with one section
// per stage, and flag overrides addressing the same keys.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "xaibench/saliency.hpp"
#include "xaibench/synthgen.hpp"
#include "xaibench/trainer.hpp"
#include "xaibench/xmetrics.hpp"

namespace xb::harness {

enum class Scale { desk, paper };
std::string to_string(Scale s);
Scale scale_from_string(const std::string& s);

/// One background condition of the experiment.
struct Condition {
  std::string name;  // "perlin" or "file"
  synth::DatasetConfig dataset;
};

struct ExperimentConfig {
  Scale scale = Scale::desk;
  std::uint64_t seed = 1;
  std::filesystem::path out = "out";

  /// Image shape, splits and lesions shared by every condition.
  synth::DatasetConfig dataset = synth::DatasetConfig::desk_scale();
  /// Directory of background PNGs with masks; enables the file condition and
  /// supplies the masks of the Perlin condition.
  std::optional<std::filesystem::path> background_dir;

  train::Hyperparams hp;

  std::vector<saliency::Method> methods{saliency::kAllMethods.begin(),
                                        saliency::kAllMethods.end()};
  saliency::MethodSpec rules;  // alpha, beta, epsilon, input bounds
  int pattern_samples = 2000;  // training samples for pattern estimation

  int eval_count = 200;
  std::string eval_selection = "first";  // or "random"
  metrics::ScoreTransform transform = metrics::ScoreTransform::abs;
  double specificity = 0.99;
  bool mask_restricted = false;

  /// Defaults of a scale: desk (64 x 64, two blocks, reduced splits and
  /// schedule) or paper (140 x 192, four blocks, full splits and schedule).
  static ExperimentConfig preset(Scale scale);

  net::Architecture architecture() const;
  std::vector<Condition> conditions() const;
  void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);

/// A `section.key = value` assignment from a file or a flag.
struct ConfigEntry {
  std::string section;
  std::string key;
  std::string value;
};

struct ConfigKey {
  std::string section;
  std::string key;
  std::string help;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

/// Every recognized key, in documentation order.
const std::vector<ConfigKey>& config_keys();

/// Throws ConfigError for unknown keys or unparsable values.
void apply(ExperimentConfig& config, const ConfigEntry& entry);

/// Reads an INI file ([experiment], [dataset], [train], [explain],
/// [evaluate] sections of key = value lines; ';' or '#' comments).
std::vector<ConfigEntry> read_config_file(const std::filesystem::path& path);

/// Preset of the scale named by the last `experiment.scale` entry (or
/// `scale` if none), then every entry in order.
ExperimentConfig resolve_config(Scale scale, const std::vector<ConfigEntry>& entries);

}  // namespace xb::harness
