#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "xaibench/errors.hpp"
#include "xaibench/harness.hpp"

namespace xb::harness {

namespace {

struct Shorthand {
  const char* flag;
  const char* section;
  const char* key;
  const char* help;
};

constexpr Shorthand kShorthands[] = {
    {"--scale", "experiment", "scale", "preset: desk or paper"},
    {"--seed", "experiment", "seed", "master seed"},
    {"--out", "experiment", "out", "output directory"},
    {"--background-dir", "experiment", "background_dir",
     "directory of background PNGs and masks (enables the file condition)"},
    {"--methods", "explain", "methods", "comma-separated saliency methods, or 'all'"},
    {"--transform", "evaluate", "transform", "score transform: abs, raw or pos"},
};

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Synthetic benchmark of saliency methods on lesion images", "xaibench"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  bool force = false;
  app.add_option("--config", config_path, "INI configuration file")->check(CLI::ExistingFile);
  app.add_flag("--force", force, "rerun stages even if their outputs verify");

  std::vector<std::string> shorthand_values(std::size(kShorthands));
  for (std::size_t i = 0; i < std::size(kShorthands); ++i)
    app.add_option(kShorthands[i].flag, shorthand_values[i], kShorthands[i].help)
        ->group("Common settings");

  const auto& keys = config_keys();
  std::vector<std::string> dotted_values(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i)
    app.add_option("--" + keys[i].section + "." + keys[i].key, dotted_values[i], keys[i].help)
        ->group("Configuration keys");

  const std::pair<const char*, const char*> subcommands[] = {
      {"generate", "synthesize the datasets"},
      {"train", "train the networks and select the best run"},
      {"explain", "estimate patterns and compute heatmaps"},
      {"evaluate", "score heatmaps against the ground truth"},
      {"report", "write report.json, combined tables and figures"},
      {"run-all", "run every stage in order"},
  };
  for (const auto& [name, help] : subcommands) app.add_subcommand(name, help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 2;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  ExperimentConfig config;
  try {
    // Precedence: file, then dotted keys, then shorthand flags.
    std::vector<ConfigEntry> entries;
    if (!config_path.empty()) entries = read_config_file(config_path);
    for (std::size_t i = 0; i < keys.size(); ++i)
      if (app.count("--" + keys[i].section + "." + keys[i].key))
        entries.push_back({keys[i].section, keys[i].key, dotted_values[i]});
    for (std::size_t i = 0; i < std::size(kShorthands); ++i)
      if (app.count(kShorthands[i].flag))
        entries.push_back({kShorthands[i].section, kShorthands[i].key, shorthand_values[i]});
    config = resolve_config(Scale::desk, entries);
  } catch (const Error& e) {
    err << "xaibench: configuration error: " << e.what() << "\n";
    return 2;
  }

  try {
    Experiment exp(config, &out);
    if (command == "generate") exp.generate(force);
    else if (command == "train") exp.train(force);
    else if (command == "explain") exp.explain(force);
    else if (command == "evaluate") exp.evaluate(force);
    else if (command == "report") exp.report(force);
    else exp.run_all(force);
  } catch (const StageError& e) {
    err << "xaibench: stage " << e.what() << "\n";
    return 1;
  } catch (const ConfigError& e) {
    err << "xaibench: configuration error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "xaibench: " << command << ": " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace xb::harness
