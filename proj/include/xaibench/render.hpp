#pragma once

// Figures: a sample/heatmap montage (PNG) and per-metric box plots (SVG).

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "xaibench/raster.hpp"
#include "xaibench/xmetrics.hpp"

namespace xb::harness {

/// One montage row: input, ground truth, then one heatmap per method.
struct MontageRow {
  std::string label;
  Image input;
  Mask ground_truth;
  std::vector<Image> heatmaps;
};

/// Symmetric diverging color of v in [-1, 1]: blue, white at 0, red.
std::array<std::uint8_t, 3> diverging_color(double v);

/// Interleaved RGB raster (3 * width columns) of rows x (2 + methods) tiles
/// without gaps. Heatmaps are scaled by their own max |value|.
Raster<std::uint8_t> montage_rgb(const std::vector<MontageRow>& rows);

/// Writes montage_rgb to a PNG; returns (height, width) in pixels.
Shape render_montage(const std::filesystem::path& path, const std::vector<MontageRow>& rows);

/// Tukey box statistics; quartiles by linear interpolation between order
/// statistics, whiskers at the most extreme values within 1.5 IQR.
struct BoxStats {
  double q1 = 0, median = 0, q3 = 0;
  double whisker_low = 0, whisker_high = 0;
  std::vector<double> outliers;
};

BoxStats box_stats(std::vector<double> values);

/// Three panels (ROC-AUC, mAP, PREC99), one box per method; median lines carry
/// a data-median attribute. Throws MetricError unless some method has >= 5 rows.
std::string boxplot_svg(const metrics::MetricsReport& report, const std::string& title);
void render_boxplots(const std::filesystem::path& path, const metrics::MetricsReport& report,
                     const std::string& title);

}  // namespace xb::harness
