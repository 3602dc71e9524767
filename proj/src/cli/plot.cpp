// SPDX-License-Identifier: Apache-2.0
#include "cfcap/cli/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

#include "cfcap/common.hpp"

namespace cfcap::cli {

namespace {

constexpr double kPanelW = 420, kPanelH = 300, kMargin = 50;

std::string fmt(double v, const char* spec = "%.4g") {
  char buf[32];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

struct Axis {
  double lo, hi;
  double map(double v, double a, double b) const { return hi == lo ? (a + b) / 2 : a + (v - lo) / (hi - lo) * (b - a); }
};

}  // namespace

std::string sweep_svg(std::span<const SweepRow> rows) {
  if (rows.empty()) throw InputError("sweep plot: no rows");
  double max_finite = 0.0;
  for (const auto& r : rows) {
    if (r.alpha < 1.0) max_finite = std::max(max_finite, -std::log10(1.0 - r.alpha));
  }
  auto xval = [&](double alpha) { return alpha < 1.0 ? -std::log10(1.0 - alpha) : max_finite + 1.0; };
  std::vector<double> xs;
  for (const auto& r : rows) xs.push_back(xval(r.alpha));
  const Axis xa{*std::min_element(xs.begin(), xs.end()), *std::max_element(xs.begin(), xs.end())};

  std::map<std::string, std::vector<SweepRow>> series;
  for (const auto& r : rows) series[r.variant].push_back(r);
  for (auto& [name, pts] : series) {
    std::sort(pts.begin(), pts.end(), [](const SweepRow& a, const SweepRow& b) { return a.alpha < b.alpha; });
  }
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << 2 * kPanelW << "\" height=\"" << kPanelH
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (int panel = 0; panel < 2; ++panel) {
    const double ox = panel * kPanelW;
    const double left = ox + kMargin, right = ox + kPanelW - 20, top = 30, bottom = kPanelH - 40;
    auto metric = [panel](const SweepRow& r) { return panel == 0 ? r.chair_s : r.bleu4; };
    double lo = metric(rows[0]), hi = lo;
    for (const auto& r : rows) {
      lo = std::min(lo, metric(r));
      hi = std::max(hi, metric(r));
    }
    const double pad = hi > lo ? 0.1 * (hi - lo) : 0.05;
    const Axis ya{lo - pad, hi + pad};
    svg << "<text x=\"" << (left + right) / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">"
        << (panel == 0 ? "CHAIR_s" : "BLEU-4") << " vs alpha</text>\n";
    svg << "<line x1=\"" << left << "\" y1=\"" << bottom << "\" x2=\"" << right << "\" y2=\"" << bottom
        << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << bottom
        << "\" stroke=\"black\"/>\n";
    for (const auto& r : series.begin()->second) {
      const double x = xa.map(xval(r.alpha), left + 10, right - 10);
      svg << "<text x=\"" << x << "\" y=\"" << bottom + 15 << "\" text-anchor=\"middle\">" << fmt(r.alpha, "%.6g")
          << "</text>\n";
    }
    for (int t = 0; t <= 4; ++t) {
      const double v = ya.lo + (ya.hi - ya.lo) * t / 4.0;
      const double y = ya.map(v, bottom, top);
      svg << "<text x=\"" << left - 5 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << fmt(v, "%.3f")
          << "</text>\n";
    }
    svg << "<text x=\"" << (left + right) / 2 << "\" y=\"" << kPanelH - 8 << "\" text-anchor=\"middle\">alpha</text>\n";
    int color = 0;
    for (const auto& [name, pts] : series) {
      const char* c = kColors[color++ % 4];
      svg << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"2\" points=\"";
      for (const auto& r : pts) {
        svg << xa.map(xval(r.alpha), left + 10, right - 10) << ',' << ya.map(metric(r), bottom, top) << ' ';
      }
      svg << "\"/>\n";
      for (const auto& r : pts) {
        svg << "<circle cx=\"" << xa.map(xval(r.alpha), left + 10, right - 10) << "\" cy=\""
            << ya.map(metric(r), bottom, top) << "\" r=\"3\" fill=\"" << c << "\"/>\n";
      }
      const double ly = top + 14 * color;
      svg << "<text x=\"" << right - 60 << "\" y=\"" << ly << "\" fill=\"" << c << "\">" << name << "</text>\n";
    }
  }
  svg << "</svg>\n";
  return svg.str();
}

void write_sweep_svg(const std::filesystem::path& path, std::span<const SweepRow> rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << sweep_svg(rows);
}

}  // namespace cfcap::cli
