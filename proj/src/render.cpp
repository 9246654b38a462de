#include "xaibench/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "xaibench/errors.hpp"
#include "xaibench/png_io.hpp"

namespace xb::harness {

std::array<std::uint8_t, 3> diverging_color(double v) {
  // Endpoints close to the RdBu extremes; linear blend through white.
  constexpr std::array<double, 3> kNeg{33, 102, 172};
  constexpr std::array<double, 3> kPos{178, 24, 43};
  v = std::clamp(std::isfinite(v) ? v : 0.0, -1.0, 1.0);
  const auto& end = v < 0 ? kNeg : kPos;
  const double t = std::abs(v);
  std::array<std::uint8_t, 3> c{};
  for (int k = 0; k < 3; ++k)
    c[k] = static_cast<std::uint8_t>(std::lround(255.0 + (end[k] - 255.0) * t));
  return c;
}

Raster<std::uint8_t> montage_rgb(const std::vector<MontageRow>& rows) {
  if (rows.empty()) throw ConfigError("montage needs at least one row");
  const Shape tile = shape_of(rows.front().input);
  const std::size_t cols = 2 + rows.front().heatmaps.size();
  for (const auto& r : rows) {
    if (shape_of(r.input) != tile || shape_of(r.ground_truth) != tile)
      throw ShapeError("montage row '" + r.label + "' has inconsistent tile shapes");
    if (r.heatmaps.size() + 2 != cols)
      throw ShapeError("montage rows differ in their number of heatmaps");
    for (const auto& h : r.heatmaps)
      if (shape_of(h) != tile) throw ShapeError("montage heatmap shape differs from input");
  }

  Raster<std::uint8_t> rgb = Raster<std::uint8_t>::Zero(
      static_cast<Eigen::Index>(rows.size()) * tile.height,
      static_cast<Eigen::Index>(cols) * tile.width * 3);
  auto put = [&](std::size_t row, std::size_t col, int y, int x, std::array<std::uint8_t, 3> c) {
    const auto py = static_cast<Eigen::Index>(row) * tile.height + y;
    const auto px = (static_cast<Eigen::Index>(col) * tile.width + x) * 3;
    for (int k = 0; k < 3; ++k) rgb(py, px + k) = c[k];
  };
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& row = rows[r];
    for (int y = 0; y < tile.height; ++y) {
      for (int x = 0; x < tile.width; ++x) {
        const auto g = static_cast<std::uint8_t>(
            std::lround(255.0 * std::clamp(static_cast<double>(row.input(y, x)), 0.0, 1.0)));
        put(r, 0, y, x, {g, g, g});
        const std::uint8_t m = row.ground_truth(y, x) ? 255 : 0;
        put(r, 1, y, x, {m, m, m});
      }
    }
    for (std::size_t h = 0; h < row.heatmaps.size(); ++h) {
      const auto& hm = row.heatmaps[h];
      const double scale = static_cast<double>(hm.cwiseAbs().maxCoeff());
      for (int y = 0; y < tile.height; ++y)
        for (int x = 0; x < tile.width; ++x)
          put(r, 2 + h, y, x,
              diverging_color(scale > 0 ? static_cast<double>(hm(y, x)) / scale : 0.0));
    }
  }
  return rgb;
}

Shape render_montage(const std::filesystem::path& path, const std::vector<MontageRow>& rows) {
  const auto rgb = montage_rgb(rows);
  write_png_rgb(path, rgb);
  return {static_cast<int>(rgb.rows()), static_cast<int>(rgb.cols() / 3)};
}

// --- box plots ----------------------------------------------------------------

namespace {

double quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string px(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

BoxStats box_stats(std::vector<double> values) {
  if (values.empty()) throw MetricError("box statistics of an empty sample");
  std::sort(values.begin(), values.end());
  BoxStats b;
  b.q1 = quantile(values, 0.25);
  b.median = quantile(values, 0.5);
  b.q3 = quantile(values, 0.75);
  const double iqr = b.q3 - b.q1;
  const double lo = b.q1 - 1.5 * iqr;
  const double hi = b.q3 + 1.5 * iqr;
  b.whisker_low = b.q1;
  b.whisker_high = b.q3;
  for (double v : values) {
    if (v < lo || v > hi) {
      b.outliers.push_back(v);
      continue;
    }
    b.whisker_low = std::min(b.whisker_low, v);
    b.whisker_high = std::max(b.whisker_high, v);
  }
  return b;
}

std::string boxplot_svg(const metrics::MetricsReport& report, const std::string& title) {
  std::vector<std::string> methods;
  for (const auto& s : report.summaries)
    if (s.samples >= 5) methods.push_back(s.method);
  if (methods.empty()) throw MetricError("box plots need a method with at least 5 samples");

  struct Panel {
    const char* name;
    double metrics::MetricsRow::*field;
  };
  const Panel panels[] = {{"ROC-AUC", &metrics::MetricsRow::roc_auc},
                          {"mAP", &metrics::MetricsRow::ap},
                          {"PREC99", &metrics::MetricsRow::prec99}};

  constexpr double kLeft = 50, kTop = 40, kPlotH = 240, kBoxStep = 36, kBoxW = 20, kBottom = 110;
  const double plot_w = kBoxStep * static_cast<double>(methods.size()) + 10;
  const double panel_w = kLeft + plot_w + 20;
  const double width = panel_w * 3;
  const double height = kTop + kPlotH + kBottom;
  auto y_of = [&](double v) { return kTop + kPlotH * (1.0 - std::clamp(v, 0.0, 1.0)); };

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + px(width) + "\" height=\"" +
       px(height) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + px(width / 2) + "\" y=\"16\" text-anchor=\"middle\" font-size=\"14\">" +
       escape(title) + "</text>\n";

  for (std::size_t p = 0; p < 3; ++p) {
    const auto& panel = panels[p];
    const double x0 = panel_w * static_cast<double>(p) + kLeft;
    s += "<g class=\"panel\" data-metric=\"" + std::string(panel.name) + "\">\n";
    s += "<text x=\"" + px(x0 + plot_w / 2) + "\" y=\"" + px(kTop - 8) +
         "\" text-anchor=\"middle\" font-size=\"12\">" + panel.name + "</text>\n";
    s += "<line x1=\"" + px(x0) + "\" y1=\"" + px(kTop) + "\" x2=\"" + px(x0) + "\" y2=\"" +
         px(kTop + kPlotH) + "\" stroke=\"black\"/>\n";
    s += "<line x1=\"" + px(x0) + "\" y1=\"" + px(kTop + kPlotH) + "\" x2=\"" + px(x0 + plot_w) +
         "\" y2=\"" + px(kTop + kPlotH) + "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
      const double v = 0.25 * t;
      s += "<line x1=\"" + px(x0 - 4) + "\" y1=\"" + px(y_of(v)) + "\" x2=\"" + px(x0) +
           "\" y2=\"" + px(y_of(v)) + "\" stroke=\"black\"/>\n";
      s += "<text x=\"" + px(x0 - 6) + "\" y=\"" + px(y_of(v) + 4) +
           "\" text-anchor=\"end\">" + num(v) + "</text>\n";
    }
    s += "<text transform=\"translate(" + px(x0 - 36) + "," + px(kTop + kPlotH / 2) +
         ") rotate(-90)\" text-anchor=\"middle\">" + panel.name + "</text>\n";

    for (std::size_t m = 0; m < methods.size(); ++m) {
      std::vector<double> v;
      for (const auto& r : report.rows)
        if (r.method == methods[m]) v.push_back(r.*panel.field);
      const BoxStats b = box_stats(v);
      const double cx = x0 + 10 + kBoxStep * (static_cast<double>(m) + 0.5);
      const double l = cx - kBoxW / 2;
      const double rr = cx + kBoxW / 2;
      s += "<g class=\"box\" data-method=\"" + escape(methods[m]) + "\" data-n=\"" +
           std::to_string(v.size()) + "\">\n";
      s += "<line x1=\"" + px(cx) + "\" y1=\"" + px(y_of(b.whisker_low)) + "\" x2=\"" + px(cx) +
           "\" y2=\"" + px(y_of(b.q1)) + "\" stroke=\"black\"/>\n";
      s += "<line x1=\"" + px(cx) + "\" y1=\"" + px(y_of(b.q3)) + "\" x2=\"" + px(cx) +
           "\" y2=\"" + px(y_of(b.whisker_high)) + "\" stroke=\"black\"/>\n";
      for (double w : {b.whisker_low, b.whisker_high})
        s += "<line x1=\"" + px(cx - kBoxW / 4) + "\" y1=\"" + px(y_of(w)) + "\" x2=\"" +
             px(cx + kBoxW / 4) + "\" y2=\"" + px(y_of(w)) + "\" stroke=\"black\"/>\n";
      s += "<rect x=\"" + px(l) + "\" y=\"" + px(y_of(b.q3)) + "\" width=\"" + px(kBoxW) +
           "\" height=\"" + px(y_of(b.q1) - y_of(b.q3)) +
           "\" fill=\"#9ecae1\" stroke=\"black\" data-q1=\"" + num(b.q1) + "\" data-q3=\"" +
           num(b.q3) + "\"/>\n";
      s += "<line class=\"median\" x1=\"" + px(l) + "\" y1=\"" + px(y_of(b.median)) +
           "\" x2=\"" + px(rr) + "\" y2=\"" + px(y_of(b.median)) +
           "\" stroke=\"#b2182b\" stroke-width=\"2\" data-median=\"" + num(b.median) + "\"/>\n";
      for (double o : b.outliers)
        s += "<circle cx=\"" + px(cx) + "\" cy=\"" + px(y_of(o)) +
             "\" r=\"2\" fill=\"none\" stroke=\"black\" data-value=\"" + num(o) + "\"/>\n";
      s += "<text transform=\"translate(" + px(cx + 3) + "," + px(kTop + kPlotH + 8) +
           ") rotate(45)\">" + escape(methods[m]) + "</text>\n";
      s += "</g>\n";
    }
    s += "</g>\n";
  }
  s += "</svg>\n";
  return s;
}

void render_boxplots(const std::filesystem::path& path, const metrics::MetricsReport& report,
                     const std::string& title) {
  const std::string svg = boxplot_svg(report, title);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << svg;
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace xb::harness
