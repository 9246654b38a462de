#pragma once

// Experiment pipeline: generate -> train -> explain -> evaluate -> report,
// one output subtree per background condition. Every stage leaves a marker
// with a fingerprint of its inputs and SHA-256 hashes of its outputs; a
// stage whose marker verifies is skipped on the next run.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "xaibench/config.hpp"

namespace xb::harness {

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

enum class Stage { generate, train, explain, evaluate, report };
std::string to_string(Stage s);

/// Relaxes glibc's mmap threshold so large per-sample temporaries are reused
/// instead of being mapped and unmapped on every allocation. No-op elsewhere.
void tune_allocator();

class Experiment {
 public:
  /// `log` receives progress lines (may be null).
  Experiment(ExperimentConfig config, std::ostream* log = nullptr);

  const ExperimentConfig& config() const { return config_; }
  std::filesystem::path condition_dir(const Condition& c) const;

  /// Each stage runs for every condition. Stages whose outputs verify are
  /// skipped unless `force`. A missing prerequisite raises StageError with
  /// missing_input() set; any other failure raises StageError naming the stage.
  void generate(bool force = false);
  void train(bool force = false);
  void explain(bool force = false);
  void evaluate(bool force = false);
  /// Writes report.json, combined CSVs and figures; returns the report.
  nlohmann::json report(bool force = false);

  nlohmann::json run_all(bool force = false);

 private:
  ExperimentConfig config_;
  std::ostream* log_;

  void note(const std::string& line) const;
  void run_generate(const Condition& c);
  void run_train(const Condition& c);
  void run_explain(const Condition& c);
  void run_evaluate(const Condition& c);
};

/// Command-line entry point. Returns 0 on success, 1 on a stage failure
/// (including missing outputs of an earlier stage), 2 on usage errors.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace xb::harness
