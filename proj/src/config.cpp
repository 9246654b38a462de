#include "xaibench/config.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "xaibench/errors.hpp"

namespace xb::harness {

std::string to_string(Scale s) { return s == Scale::paper ? "paper" : "desk"; }

Scale scale_from_string(const std::string& s) {
  if (s == "desk") return Scale::desk;
  if (s == "paper") return Scale::paper;
  throw ConfigError("unknown scale '" + s + "' (expected desk or paper)");
}

ExperimentConfig ExperimentConfig::preset(Scale scale) {
  ExperimentConfig c;
  c.scale = scale;
  if (scale == Scale::paper) {
    c.dataset = synth::DatasetConfig::paper_scale();
    return c;
  }
  c.dataset = synth::DatasetConfig::desk_scale();
  c.hp.max_epochs = 60;
  return c;
}

net::Architecture ExperimentConfig::architecture() const {
  net::Architecture a = scale == Scale::paper ? net::Architecture::paper() : net::Architecture::desk();
  a.input = {1, dataset.image_shape.height, dataset.image_shape.width};
  return a;
}

std::vector<Condition> ExperimentConfig::conditions() const {
  std::vector<Condition> out;
  synth::DatasetConfig perlin = dataset;
  perlin.background = synth::BackgroundKind::perlin;
  perlin.master_seed = seed;
  perlin.archive = background_dir;
  out.push_back({"perlin", perlin});
  if (background_dir) {
    synth::DatasetConfig file = perlin;
    file.background = synth::BackgroundKind::file;
    out.push_back({"file", file});
  }
  return out;
}

void ExperimentConfig::validate() const {
  if (methods.empty()) throw ConfigError("at least one saliency method is required");
  for (std::size_t i = 0; i < methods.size(); ++i)
    for (std::size_t j = i + 1; j < methods.size(); ++j)
      if (methods[i] == methods[j])
        throw ConfigError("method '" + saliency::to_string(methods[i]) + "' listed twice");
  for (const auto& c : conditions()) c.dataset.validate();
  hp.validate();
  for (auto m : methods) {
    saliency::MethodSpec s = rules;
    s.kind = m;
    s.validate();
  }
  if (eval_count < 1) throw ConfigError("evaluate.count must be positive");
  if (eval_count > dataset.split_sizes.holdout / 2)
    throw ConfigError("evaluate.count exceeds the class-2 holdout samples");
  if (eval_selection != "first" && eval_selection != "random")
    throw ConfigError("evaluate.selection must be 'first' or 'random'");
  if (!(specificity > 0 && specificity < 1))
    throw ConfigError("evaluate.specificity must lie in (0, 1)");
  if (pattern_samples < 1) throw ConfigError("explain.pattern_samples must be positive");
  if (out.empty()) throw ConfigError("experiment.out must name a directory");
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  nlohmann::json methods = nlohmann::json::array();
  for (auto m : c.methods) methods.push_back(saliency::to_string(m));
  nlohmann::json conditions = nlohmann::json::array();
  for (const auto& cond : c.conditions()) {
    nlohmann::json d = cond.dataset;
    // The archive location is machine-specific; its contents are hashed
    // into the dataset manifest instead.
    if (cond.dataset.archive) d["archive"] = "<background_dir>";
    conditions.push_back({{"name", cond.name}, {"dataset", d}});
  }
  j = {{"scale", to_string(c.scale)},
       {"seed", c.seed},
       {"architecture", c.architecture()},
       {"conditions", conditions},
       {"hyperparams", c.hp},
       {"methods", methods},
       {"rules",
        {{"alpha", c.rules.alpha},
         {"beta", c.rules.beta},
         {"epsilon", c.rules.epsilon},
         {"input_bounds", {c.rules.lower, c.rules.upper}}}},
       {"pattern_samples", c.pattern_samples},
       {"evaluation",
        {{"count", c.eval_count},
         {"selection", c.eval_selection},
         {"transform", metrics::to_string(c.transform)},
         {"specificity", c.specificity},
         {"mask_restricted", c.mask_restricted}}}};
}

// --- keys -------------------------------------------------------------------

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end)
    throw ConfigError("invalid value '" + v + "' for " + key);
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("invalid boolean '" + v + "' for " + key);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  for (std::string item; std::getline(ss, item, ',');) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::pair<int, int> parse_pair(const std::string& key, const std::string& v) {
  const auto items = split_list(v);
  if (items.size() != 2) throw ConfigError(key + " expects two comma-separated integers");
  return {parse_number<int>(key, items[0]), parse_number<int>(key, items[1])};
}

std::vector<ConfigKey> make_keys() {
  using C = ExperimentConfig;
  using S = const std::string&;
  std::vector<ConfigKey> k;
  auto add = [&](std::string section, std::string key, std::string help,
                 std::function<void(C&, S, S)> f) {
    const std::string full = section + "." + key;
    k.push_back({section, key, std::move(help),
                 [f, full](C& c, S v) { f(c, v, full); }});
  };

  add("experiment", "scale", "size preset: desk or paper", [](C& c, S v, S) {
    c.scale = scale_from_string(v);
  });
  add("experiment", "seed", "master seed of data, initialization and shuffling",
      [](C& c, S v, S key) { c.seed = parse_number<std::uint64_t>(key, v); });
  add("experiment", "out", "output directory", [](C& c, S v, S) { c.out = v; });
  add("experiment", "background_dir",
      "directory of background PNGs (<name>.png + <name>_mask.png); adds the file condition",
      [](C& c, S v, S) {
        if (v.empty()) c.background_dir.reset();
        else c.background_dir = v;
      });

  add("dataset", "height", "image height", [](C& c, S v, S key) {
    c.dataset.image_shape.height = parse_number<int>(key, v);
  });
  add("dataset", "width", "image width", [](C& c, S v, S key) {
    c.dataset.image_shape.width = parse_number<int>(key, v);
  });
  add("dataset", "perlin_grid", "gradient-noise cells as rows,cols", [](C& c, S v, S key) {
    const auto [r, col] = parse_pair(key, v);
    c.dataset.perlin_grid = {r, col};
  });
  add("dataset", "train_size", "training samples", [](C& c, S v, S key) {
    c.dataset.split_sizes.train = parse_number<int>(key, v);
  });
  add("dataset", "val_size", "validation samples", [](C& c, S v, S key) {
    c.dataset.split_sizes.val = parse_number<int>(key, v);
  });
  add("dataset", "holdout_size", "holdout samples", [](C& c, S v, S key) {
    c.dataset.split_sizes.holdout = parse_number<int>(key, v);
  });
  add("dataset", "lesion_count", "lesions per class-2 image", [](C& c, S v, S key) {
    c.dataset.lesion.count = parse_number<int>(key, v);
  });
  add("dataset", "lesion_diameter", "lesion diameter in pixels", [](C& c, S v, S key) {
    c.dataset.lesion.diameter = parse_number<double>(key, v);
  });
  add("dataset", "lesion_intensity", "peak attenuation of a lesion", [](C& c, S v, S key) {
    c.dataset.lesion.intensity = parse_number<double>(key, v);
  });

  add("train", "learning_rate", "SGD step size", [](C& c, S v, S key) {
    c.hp.learning_rate = parse_number<double>(key, v);
  });
  add("train", "momentum", "SGD momentum", [](C& c, S v, S key) {
    c.hp.momentum = parse_number<double>(key, v);
  });
  add("train", "batch_size", "training batch size", [](C& c, S v, S key) {
    c.hp.batch_size = parse_number<int>(key, v);
  });
  add("train", "eval_batch_size", "evaluation batch size", [](C& c, S v, S key) {
    c.hp.eval_batch_size = parse_number<int>(key, v);
  });
  add("train", "max_epochs", "epoch limit", [](C& c, S v, S key) {
    c.hp.max_epochs = parse_number<int>(key, v);
  });
  add("train", "loss_threshold", "stop once the epoch-mean training loss falls below this",
      [](C& c, S v, S key) { c.hp.loss_threshold = parse_number<double>(key, v); });
  add("train", "patience", "early-stopping patience in epochs", [](C& c, S v, S key) {
    c.hp.patience = parse_number<int>(key, v);
  });
  add("train", "min_delta", "minimum validation-loss improvement", [](C& c, S v, S key) {
    c.hp.min_delta = parse_number<double>(key, v);
  });
  add("train", "runs", "training repetitions per condition", [](C& c, S v, S key) {
    c.hp.runs = parse_number<int>(key, v);
  });

  add("explain", "methods", "comma-separated saliency methods, or 'all'", [](C& c, S v, S) {
    c.methods.clear();
    if (v == "all") {
      c.methods.assign(saliency::kAllMethods.begin(), saliency::kAllMethods.end());
      return;
    }
    for (const auto& m : split_list(v)) c.methods.push_back(saliency::method_from_string(m));
  });
  add("explain", "alpha", "LRP alpha", [](C& c, S v, S key) {
    c.rules.alpha = parse_number<double>(key, v);
  });
  add("explain", "beta", "LRP beta", [](C& c, S v, S key) {
    c.rules.beta = parse_number<double>(key, v);
  });
  add("explain", "epsilon", "denominator stabilizer", [](C& c, S v, S key) {
    c.rules.epsilon = parse_number<double>(key, v);
  });
  add("explain", "input_lower", "lower pixel bound of the deep Taylor input rule",
      [](C& c, S v, S key) { c.rules.lower = parse_number<double>(key, v); });
  add("explain", "input_upper", "upper pixel bound of the deep Taylor input rule",
      [](C& c, S v, S key) { c.rules.upper = parse_number<double>(key, v); });
  add("explain", "pattern_samples", "training samples used to estimate patterns",
      [](C& c, S v, S key) { c.pattern_samples = parse_number<int>(key, v); });

  add("evaluate", "count", "class-2 holdout samples to explain and score", [](C& c, S v, S key) {
    c.eval_count = parse_number<int>(key, v);
  });
  add("evaluate", "selection", "first (stored order) or random (seeded)", [](C& c, S v, S) {
    c.eval_selection = v;
  });
  add("evaluate", "transform", "heatmap score transform: abs, raw or pos", [](C& c, S v, S) {
    c.transform = metrics::transform_from_string(v);
  });
  add("evaluate", "specificity", "specificity of the thresholded precision", [](C& c, S v, S key) {
    c.specificity = parse_number<double>(key, v);
  });
  add("evaluate", "mask_restricted", "score only pixels inside the brain mask",
      [](C& c, S v, S key) { c.mask_restricted = parse_bool(key, v); });
  return k;
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = make_keys();
  return keys;
}

void apply(ExperimentConfig& config, const ConfigEntry& entry) {
  for (const auto& k : config_keys()) {
    if (k.section == entry.section && k.key == entry.key) {
      k.set(config, entry.value);
      return;
    }
  }
  throw ConfigError("unknown configuration key '" + entry.section + "." + entry.key + "'");
}

std::vector<ConfigEntry> read_config_file(const std::filesystem::path& path) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("cannot read config " + path.string() + ": " + e.what());
  }
  std::vector<ConfigEntry> out;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("config key '" + section + "' is outside a section");
    for (const auto& [key, value] : body) out.push_back({section, key, value.data()});
  }
  return out;
}

ExperimentConfig resolve_config(Scale scale, const std::vector<ConfigEntry>& entries) {
  for (const auto& e : entries)
    if (e.section == "experiment" && e.key == "scale") scale = scale_from_string(e.value);
  ExperimentConfig c = ExperimentConfig::preset(scale);
  for (const auto& e : entries) apply(c, e);
  c.validate();
  return c;
}

}  // namespace xb::harness
