#include "xaibench/xmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "xaibench/errors.hpp"

namespace xb::metrics {

std::string to_string(ScoreTransform t) {
  switch (t) {
    case ScoreTransform::abs: return "abs";
    case ScoreTransform::raw: return "raw";
    case ScoreTransform::pos: return "pos";
  }
  return "abs";
}

ScoreTransform transform_from_string(const std::string& s) {
  if (s == "abs") return ScoreTransform::abs;
  if (s == "raw") return ScoreTransform::raw;
  if (s == "pos") return ScoreTransform::pos;
  throw ConfigError("unknown score transform '" + s + "' (expected abs, raw or pos)");
}

Eigen::VectorXd transform_scores(const Eigen::Ref<const Eigen::VectorXd>& relevance,
                                 ScoreTransform mode) {
  switch (mode) {
    case ScoreTransform::abs: return relevance.cwiseAbs();
    case ScoreTransform::pos: return relevance.cwiseMax(0.0);
    case ScoreTransform::raw: break;
  }
  return relevance;
}

ScoredPixels::ScoredPixels(Eigen::VectorXd s, std::vector<std::uint8_t> l)
    : scores(std::move(s)), labels(std::move(l)) {
  if (static_cast<std::size_t>(scores.size()) != labels.size())
    throw ShapeError("scores and labels differ in length");
  for (auto v : labels) (v ? positives : negatives) += 1;
}

template <typename Scalar>
ScoredPixels score_pixels(const Raster<Scalar>& heatmap, const Mask& ground_truth,
                          ScoreTransform mode, const Mask* region) {
  if (shape_of(heatmap) != shape_of(ground_truth))
    throw ShapeError("heatmap and ground truth differ in shape");
  if (region && shape_of(*region) != shape_of(ground_truth))
    throw ShapeError("evaluation region differs in shape from the ground truth");
  const Eigen::VectorXd all = transform_scores(heatmap, mode);
  if (!all.allFinite()) throw MetricError("heatmap contains non-finite values");
  const auto n = static_cast<std::size_t>(all.size());
  const std::uint8_t* gt = ground_truth.data();
  if (!region) return {all, std::vector<std::uint8_t>(gt, gt + n)};

  std::vector<double> s;
  std::vector<std::uint8_t> l;
  for (std::size_t i = 0; i < n; ++i) {
    if (!region->data()[i]) continue;
    s.push_back(all(static_cast<Eigen::Index>(i)));
    l.push_back(gt[i] ? 1 : 0);
  }
  return {Eigen::Map<const Eigen::VectorXd>(s.data(), static_cast<Eigen::Index>(s.size())),
          std::move(l)};
}

template ScoredPixels score_pixels<float>(const Raster<float>&, const Mask&, ScoreTransform,
                                          const Mask*);
template ScoredPixels score_pixels<double>(const Raster<double>&, const Mask&, ScoreTransform,
                                           const Mask*);

namespace {

std::vector<Eigen::Index> ascending_order(const Eigen::VectorXd& s) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(s.size()));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return s(a) < s(b); });
  return idx;
}

/// Descending by score, equal scores in original index order.
std::vector<Eigen::Index> descending_order(const Eigen::VectorXd& s) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(s.size()));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return s(a) > s(b); });
  return idx;
}

}  // namespace

double roc_auc(const ScoredPixels& sp) {
  if (sp.positives < 1 || sp.negatives < 1)
    throw MetricError("ROC-AUC needs at least one positive and one negative pixel");
  const auto order = ascending_order(sp.scores);
  // Sum of midranks over positives; ranks are 1-based, so a tie group
  // occupying positions [i, j) shares rank (i + j + 1) / 2.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i + 1;
    while (j < order.size() && sp.scores(order[j]) == sp.scores(order[i])) ++j;
    const double rank = 0.5 * static_cast<double>(i + j + 1);
    for (std::size_t k = i; k < j; ++k)
      if (sp.labels[static_cast<std::size_t>(order[k])]) rank_sum += rank;
    i = j;
  }
  const double p = static_cast<double>(sp.positives);
  const double n = static_cast<double>(sp.negatives);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

double average_precision(const ScoredPixels& sp) {
  if (sp.positives < 1) throw MetricError("average precision needs a positive pixel");
  const auto order = descending_order(sp.scores);
  // Extended accumulator: short sums such as (1 + 2/3) / 2 round to the
  // nearest double of the exact rational.
  long double sum = 0.0L;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (!sp.labels[static_cast<std::size_t>(order[k])]) continue;
    ++hits;
    sum += static_cast<long double>(hits) / static_cast<long double>(k + 1);
  }
  return static_cast<double>(sum / static_cast<long double>(sp.positives));
}

ThresholdPrecision precision_at_specificity(const ScoredPixels& sp, double specificity) {
  if (sp.positives < 1 || sp.negatives < 1)
    throw MetricError("PREC99 needs at least one positive and one negative pixel");
  if (!(specificity > 0.0 && specificity <= 1.0))
    throw ConfigError("specificity must lie in (0, 1]");
  // The epsilon keeps e.g. 0.01 * 100 from flooring to 0 in binary floating point.
  const auto budget = static_cast<std::size_t>(
      std::floor((1.0 - specificity) * static_cast<double>(sp.negatives) + 1e-9));

  // Walk distinct scores from the top; the last group still within budget
  // gives the smallest admissible threshold.
  const auto order = descending_order(sp.scores);
  ThresholdPrecision out;
  out.no_threshold = true;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double t = sp.scores(order[i]);
    std::size_t j = i;
    std::size_t gtp = tp, gfp = fp;
    for (; j < order.size() && sp.scores(order[j]) == t; ++j)
      (sp.labels[static_cast<std::size_t>(order[j])] ? gtp : gfp) += 1;
    if (gfp > budget) break;
    tp = gtp;
    fp = gfp;
    out.no_threshold = false;
    out.threshold = t;
    out.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    i = j;
  }
  if (out.no_threshold) out.precision = 0.0;
  return out;
}

// --- aggregation ------------------------------------------------------------

namespace {

Moments moments(const std::vector<double>& v) {
  Moments m;
  if (v.empty()) return m;
  // Shifted by the first value, so identical values give exactly std 0.
  const double n = static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += x - v.front();
  const double shift = s / n;
  double q = 0.0;
  for (double x : v) q += (x - v.front() - shift) * (x - v.front() - shift);
  m.mean = v.front() + shift;
  m.std = std::sqrt(q / n);
  return m;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_header_comment(const MetricsReport& r) {
  return "# transform=" + to_string(r.transform) + " specificity=" + fmt(r.specificity) +
         " samples=" + std::to_string(r.sample_count) +
         " mask_restricted=" + (r.mask_restricted ? "true" : "false");
}

}  // namespace

void MetricsReport::aggregate() {
  summaries.clear();
  std::map<std::string, std::size_t> slot;
  std::vector<std::array<std::vector<double>, 3>> values;
  for (const auto& row : rows) {
    auto [it, fresh] = slot.emplace(row.method, summaries.size());
    if (fresh) {
      summaries.push_back({});
      summaries.back().method = row.method;
      values.emplace_back();
    }
    auto& s = summaries[it->second];
    auto& v = values[it->second];
    ++s.samples;
    if (row.prec99_flag) ++s.prec99_flagged;
    v[0].push_back(row.roc_auc);
    v[1].push_back(row.ap);
    v[2].push_back(row.prec99);
  }
  sample_count = 0;
  for (std::size_t k = 0; k < summaries.size(); ++k) {
    summaries[k].roc_auc = moments(values[k][0]);
    summaries[k].ap = moments(values[k][1]);
    summaries[k].prec99 = moments(values[k][2]);
    sample_count = std::max(sample_count, summaries[k].samples);
  }
}

const MethodSummary& MetricsReport::summary(const std::string& method) const {
  for (const auto& s : summaries)
    if (s.method == method) return s;
  throw MetricError("no metrics for method '" + method + "'");
}

void to_json(nlohmann::json& j, const MetricsReport& r) {
  j = {{"transform", to_string(r.transform)},
       {"specificity", r.specificity},
       {"mask_restricted", r.mask_restricted},
       {"sample_count", r.sample_count},
       {"methods", nlohmann::json::array()}};
  for (const auto& s : r.summaries)
    j["methods"].push_back({{"method", s.method},
                            {"samples", s.samples},
                            {"roc_auc", {{"mean", s.roc_auc.mean}, {"std", s.roc_auc.std}}},
                            {"ap", {{"mean", s.ap.mean}, {"std", s.ap.std}}},
                            {"prec99", {{"mean", s.prec99.mean}, {"std", s.prec99.std}}},
                            {"prec99_flagged", s.prec99_flagged}});
}

MetricsRow score_heatmap(const HeatmapSample& sample, ScoreTransform mode, double specificity) {
  if (!sample.heatmap || !sample.ground_truth)
    throw ConfigError("heatmap sample '" + sample.sample_id + "' is missing data");
  if (sample.label != 2)
    throw ProtocolError("sample '" + sample.sample_id +
                        "' is class " + std::to_string(sample.label) +
                        "; explanation performance is defined on class-2 samples only");
  const ScoredPixels sp = score_pixels(*sample.heatmap, *sample.ground_truth, mode, sample.region);
  if (sp.positives == 0)
    throw ProtocolError("sample '" + sample.sample_id + "' has an empty ground truth");
  MetricsRow row;
  row.sample_id = sample.sample_id;
  row.method = sample.method;
  row.roc_auc = roc_auc(sp);
  row.ap = average_precision(sp);
  const auto p = precision_at_specificity(sp, specificity);
  row.prec99 = p.precision;
  row.prec99_flag = p.no_threshold;
  return row;
}

MetricsReport evaluate_heatmaps(std::span<const HeatmapSample> samples, ScoreTransform mode,
                                double specificity) {
  MetricsReport report;
  report.transform = mode;
  report.specificity = specificity;
  report.rows.reserve(samples.size());
  for (const auto& s : samples) {
    report.rows.push_back(score_heatmap(s, mode, specificity));
    if (s.region) report.mask_restricted = true;
  }
  report.aggregate();
  return report;
}

void write_metrics_csv(const std::filesystem::path& path, const MetricsReport& report,
                       const std::string& dataset) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << csv_header_comment(report) << '\n'
      << "dataset,sample_id,method,roc_auc,ap,prec99,prec99_flag\n";
  for (const auto& r : report.rows)
    out << dataset << ',' << r.sample_id << ',' << r.method << ',' << fmt(r.roc_auc) << ','
        << fmt(r.ap) << ',' << fmt(r.prec99) << ',' << (r.prec99_flag ? 1 : 0) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

void write_summary_csv(const std::filesystem::path& path, const MetricsReport& report,
                       const std::string& dataset) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << csv_header_comment(report) << '\n'
      << "dataset,method,samples,roc_auc_mean,roc_auc_std,ap_mean,ap_std,prec99_mean,"
         "prec99_std,prec99_flagged\n";
  for (const auto& s : report.summaries)
    out << dataset << ',' << s.method << ',' << s.samples << ',' << fmt(s.roc_auc.mean) << ','
        << fmt(s.roc_auc.std) << ',' << fmt(s.ap.mean) << ',' << fmt(s.ap.std) << ','
        << fmt(s.prec99.mean) << ',' << fmt(s.prec99.std) << ',' << s.prec99_flagged << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<MetricsRow> rows;
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      header = true;
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 7) throw IoError("malformed metrics row in " + path.string());
    rows.push_back({f[1], f[2], std::stod(f[3]), std::stod(f[4]), std::stod(f[5]), f[6] == "1"});
  }
  return rows;
}

}  // namespace xb::metrics
