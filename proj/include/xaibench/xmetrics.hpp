#pragma once

// Explanation performance: ranking metrics of a continuous heatmap against a
// binary ground-truth map, and their aggregation over an evaluation set.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "xaibench/raster.hpp"

namespace xb::metrics {

enum class ScoreTransform { abs, raw, pos };

std::string to_string(ScoreTransform t);
ScoreTransform transform_from_string(const std::string& s);

/// abs -> |r|, raw -> r, pos -> max(0, r).
Eigen::VectorXd transform_scores(const Eigen::Ref<const Eigen::VectorXd>& relevance,
                                 ScoreTransform mode);

template <typename Scalar>
Eigen::VectorXd transform_scores(const Raster<Scalar>& heatmap, ScoreTransform mode) {
  return transform_scores(
      Eigen::VectorXd(heatmap.template cast<double>().template reshaped<Eigen::RowMajor>()),
      mode);
}

struct ScoredPixels {
  Eigen::VectorXd scores;
  std::vector<std::uint8_t> labels;  // 1 = lesion pixel
  Eigen::Index positives = 0;
  Eigen::Index negatives = 0;

  /// Throws ShapeError on length mismatch; counts are derived from labels.
  ScoredPixels(Eigen::VectorXd s, std::vector<std::uint8_t> l);
  Eigen::Index size() const { return scores.size(); }
};

/// Heatmap against a ground-truth raster, optionally restricted to the
/// nonzero pixels of `region`.
template <typename Scalar>
ScoredPixels score_pixels(const Raster<Scalar>& heatmap, const Mask& ground_truth,
                          ScoreTransform mode, const Mask* region = nullptr);

/// Rank-sum AUC with midranks for ties. Throws MetricError unless P, N >= 1.
double roc_auc(const ScoredPixels& sp);

/// (1/P) sum of precision@k over positive ranks k; descending score order,
/// ties in original index order. Throws MetricError if P = 0.
double average_precision(const ScoredPixels& sp);

struct ThresholdPrecision {
  double precision = 0.0;
  double threshold = 0.0;
  bool no_threshold = false;  // no score keeps the false positives in budget
};

/// Precision over pixels with score >= t, t the smallest score such that at
/// most floor((1 - specificity) * N) negatives reach it.
ThresholdPrecision precision_at_specificity(const ScoredPixels& sp, double specificity = 0.99);

struct MetricsRow {
  std::string sample_id;
  std::string method;
  double roc_auc = 0.0;
  double ap = 0.0;
  double prec99 = 0.0;
  bool prec99_flag = false;
};

struct Moments {
  double mean = 0.0;
  double std = 0.0;  // population
};

struct MethodSummary {
  std::string method;
  std::size_t samples = 0;
  Moments roc_auc;
  Moments ap;
  Moments prec99;
  std::size_t prec99_flagged = 0;
};

struct MetricsReport {
  std::vector<MetricsRow> rows;
  /// One entry per method in order of first appearance in `rows`.
  std::vector<MethodSummary> summaries;
  ScoreTransform transform = ScoreTransform::abs;
  double specificity = 0.99;
  bool mask_restricted = false;
  /// Distinct samples per method (the protocol size).
  std::size_t sample_count = 0;

  /// Recomputes `summaries` and `sample_count` from `rows`.
  void aggregate();
  const MethodSummary& summary(const std::string& method) const;
};

void to_json(nlohmann::json& j, const MetricsReport& r);

/// One heatmap to score. Pointers must outlive the evaluate call.
struct HeatmapSample {
  std::string sample_id;
  std::string method;
  const Image* heatmap = nullptr;
  const Mask* ground_truth = nullptr;
  int label = 2;  // dataset class, 1-based
  const Mask* region = nullptr;
};

/// Scores a single heatmap; class-1 samples or an empty ground truth raise
/// ProtocolError.
MetricsRow score_heatmap(const HeatmapSample& sample, ScoreTransform mode,
                         double specificity = 0.99);

MetricsReport evaluate_heatmaps(std::span<const HeatmapSample> samples, ScoreTransform mode,
                                double specificity = 0.99);

/// metrics.csv / summary.csv; a leading '#' line names transform and size.
void write_metrics_csv(const std::filesystem::path& path, const MetricsReport& report,
                       const std::string& dataset = "");
void write_summary_csv(const std::filesystem::path& path, const MetricsReport& report,
                       const std::string& dataset = "");
/// Rows back from a metrics.csv written above.
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);

}  // namespace xb::metrics
