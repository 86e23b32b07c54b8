#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "patrolsim/csv.hpp"
#include "patrolsim/error.hpp"

namespace patrolsim::plots {

inline std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

inline std::string fmt(double v, int prec = 4) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*g", prec, v);
  return buf;
}

inline constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;          // NaN = gap
  std::vector<bool> infinite;     // plotted as a marker at the top edge
};

struct ChartSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::optional<double> y_max;    // values above are clipped to it
  std::optional<double> reference;  // horizontal guide line
};

namespace detail {

struct Frame {
  double width = 760, height = 440;
  double left = 70, right = 230, top = 40, bottom = 55;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;

  double px(double x) const { return left + (x - x0) / (x1 - x0) * (width - left - right); }
  double py(double y) const { return height - bottom - (y - y0) / (y1 - y0) * (height - top - bottom); }
};

inline std::vector<double> ticks(double lo, double hi, int target = 6) {
  const double span = hi - lo;
  if (!(span > 0.0)) return {lo};
  const double raw = span / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    step = m * mag;
    if (step >= raw) break;
  }
  std::vector<double> out;
  for (double t = std::ceil(lo / step) * step; t <= hi + 1e-9 * span; t += step) out.push_back(std::abs(t) < 1e-12 * step ? 0.0 : t);
  return out;
}

inline void axes(std::string& svg, const Frame& f, const ChartSpec& spec, const std::vector<double>& xticks) {
  const double bx = f.left, by = f.height - f.bottom, ex = f.width - f.right, ey = f.top;
  svg += "<rect x=\"" + fmt(bx) + "\" y=\"" + fmt(ey) + "\" width=\"" + fmt(ex - bx) + "\" height=\"" + fmt(by - ey) +
         "\" fill=\"none\" stroke=\"#333\"/>\n";
  for (double t : ticks(f.y0, f.y1)) {
    const double y = f.py(t);
    svg += "<line x1=\"" + fmt(bx) + "\" y1=\"" + fmt(y) + "\" x2=\"" + fmt(ex) + "\" y2=\"" + fmt(y) +
           "\" stroke=\"#ddd\"/>\n";
    svg += "<text x=\"" + fmt(bx - 6) + "\" y=\"" + fmt(y + 4) + "\" text-anchor=\"end\" font-size=\"11\">" +
           fmt(t) + "</text>\n";
  }
  for (double t : xticks) {
    const double x = f.px(t);
    svg += "<line x1=\"" + fmt(x) + "\" y1=\"" + fmt(by) + "\" x2=\"" + fmt(x) + "\" y2=\"" + fmt(by + 4) +
           "\" stroke=\"#333\"/>\n";
    svg += "<text x=\"" + fmt(x) + "\" y=\"" + fmt(by + 17) + "\" text-anchor=\"middle\" font-size=\"11\">" +
           fmt(t) + "</text>\n";
  }
  svg += "<text x=\"" + fmt((bx + ex) / 2) + "\" y=\"" + fmt(f.height - 12) +
         "\" text-anchor=\"middle\" font-size=\"13\">" + xml_escape(spec.x_label) + "</text>\n";
  svg += "<text transform=\"translate(16," + fmt((by + ey) / 2) +
         ") rotate(-90)\" text-anchor=\"middle\" font-size=\"13\">" + xml_escape(spec.y_label) + "</text>\n";
  svg += "<text x=\"" + fmt((bx + ex) / 2) + "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" +
         xml_escape(spec.title) + "</text>\n";
}

inline std::string header(const Frame& f) {
  return "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
         fmt(f.width) + "\" height=\"" + fmt(f.height) + "\" viewBox=\"0 0 " + fmt(f.width) + " " + fmt(f.height) +
         "\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

}  // namespace detail

/// Static multi-series line chart. NaN breaks a line; infinite points become
/// triangles on the top edge; values above y_max are clipped and noted.
inline std::string line_chart_svg(const ChartSpec& spec, const std::vector<Series>& series) {
  detail::Frame f;
  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  bool any_infinite = false, any_clipped = false;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      if (i < s.infinite.size() && s.infinite[i]) any_infinite = true;
      double y = s.y[i];
      if (!std::isfinite(y)) continue;
      if (spec.y_max && y > *spec.y_max) {
        any_clipped = true;
        y = *spec.y_max;
      }
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  }
  if (!std::isfinite(xmin)) xmin = 0, xmax = 1;
  if (!std::isfinite(ymin)) ymin = 0, ymax = 1;
  if (spec.reference) {
    ymin = std::min(ymin, *spec.reference);
    ymax = std::max(ymax, *spec.reference);
  }
  if (any_infinite && spec.y_max) ymax = std::max(ymax, *spec.y_max);
  ymin = std::min(ymin, 0.0);
  if (ymax <= ymin) ymax = ymin + 1.0;
  if (xmax <= xmin) xmax = xmin + 1.0;
  const double pad = 0.05 * (ymax - ymin);
  f.x0 = xmin - 0.3;
  f.x1 = xmax + 0.3;
  f.y0 = ymin == 0.0 ? 0.0 : ymin - pad;
  f.y1 = ymax + pad;

  std::vector<double> xticks;
  for (double x = std::ceil(xmin); x <= xmax; x += 1.0) xticks.push_back(x);

  std::string svg = detail::header(f);
  detail::axes(svg, f, spec, xticks);
  if (spec.reference) {
    const double y = f.py(*spec.reference);
    svg += "<line x1=\"" + fmt(f.left) + "\" y1=\"" + fmt(y) + "\" x2=\"" + fmt(f.width - f.right) + "\" y2=\"" +
           fmt(y) + "\" stroke=\"#555\" stroke-dasharray=\"5,4\"/>\n";
  }
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const std::string color = kPalette[k % std::size(kPalette)];
    std::string path;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      const bool inf = i < s.infinite.size() && s.infinite[i];
      double y = s.y[i];
      if (inf || !std::isfinite(y)) {
        if (!path.empty()) {
          svg += "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"1.8\" points=\"" + path + "\"/>\n";
          path.clear();
        }
        if (inf) {
          const double x = f.px(s.x[i]), top = f.py(f.y1) + 2;
          svg += "<path d=\"M" + fmt(x) + "," + fmt(top) + " l-5,9 h10 z\" fill=\"" + color + "\"/>\n";
        }
        continue;
      }
      const bool clipped = spec.y_max && y > *spec.y_max;
      if (clipped) y = *spec.y_max;
      const double px = f.px(s.x[i]), py = f.py(y);
      path += fmt(px, 6) + "," + fmt(py, 6) + " ";
      svg += "<circle cx=\"" + fmt(px, 6) + "\" cy=\"" + fmt(py, 6) + "\" r=\"" + (clipped ? "4.5" : "2.5") +
             "\" fill=\"" + (clipped ? std::string("white") : color) + "\" stroke=\"" + color + "\"/>\n";
    }
    if (!path.empty()) {
      svg += "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"1.8\" points=\"" + path + "\"/>\n";
    }
  }

  // legend
  double ly = f.top + 8;
  const double lx = f.width - f.right + 16;
  for (std::size_t k = 0; k < series.size(); ++k) {
    const std::string color = kPalette[k % std::size(kPalette)];
    svg += "<rect x=\"" + fmt(lx) + "\" y=\"" + fmt(ly - 8) + "\" width=\"14\" height=\"4\" fill=\"" + color + "\"/>\n";
    svg += "<text x=\"" + fmt(lx + 20) + "\" y=\"" + fmt(ly - 3) + "\" font-size=\"11\">" + xml_escape(series[k].label) +
           "</text>\n";
    ly += 16;
  }
  if (any_infinite) {
    svg += "<text x=\"" + fmt(lx) + "\" y=\"" + fmt(ly + 4) +
           "\" font-size=\"11\">&#9650; infinite (zero White rate)</text>\n";
    ly += 16;
  }
  if (any_clipped) {
    svg += "<text x=\"" + fmt(lx) + "\" y=\"" + fmt(ly + 4) + "\" font-size=\"11\">open circle: clipped at " +
           fmt(*spec.y_max) + "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

struct ScatterPanel {
  std::string x_label;
  std::string y_label;
  std::vector<double> x;
  std::vector<double> y;
};

/// Side-by-side scatter panels sharing a title.
inline std::string scatter_svg(const std::string& title, const std::vector<ScatterPanel>& panels) {
  const double panel_w = 380, h = 400;
  const double width = panel_w * static_cast<double>(std::max<std::size_t>(1, panels.size()));
  detail::Frame outer;
  outer.width = width;
  outer.height = h;
  std::string svg = detail::header(outer);
  svg += "<text x=\"" + fmt(width / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" + xml_escape(title) +
         "</text>\n";
  for (std::size_t p = 0; p < panels.size(); ++p) {
    const auto& panel = panels[p];
    detail::Frame f;
    f.width = panel_w;
    f.height = h;
    f.left = 70;
    f.right = 20;
    f.top = 40;
    f.bottom = 55;
    double xmin = 0, xmax = 1, ymin = 0, ymax = 0;
    for (double v : panel.x) {
      if (std::isfinite(v)) xmin = std::min(xmin, v), xmax = std::max(xmax, v);
    }
    for (double v : panel.y) {
      if (std::isfinite(v)) ymax = std::max(ymax, v), ymin = std::min(ymin, v);
    }
    if (ymax <= ymin) ymax = ymin + 1.0;
    f.x0 = xmin;
    f.x1 = xmax;
    f.y0 = ymin;
    f.y1 = ymax * 1.05;
    svg += "<g transform=\"translate(" + fmt(panel_w * static_cast<double>(p)) + ",0)\">\n";
    ChartSpec spec{"", panel.x_label, panel.y_label, std::nullopt, std::nullopt};
    std::string inner;
    detail::axes(inner, f, spec, detail::ticks(xmin, xmax, 5));
    svg += inner;
    for (std::size_t i = 0; i < panel.x.size(); ++i) {
      if (!std::isfinite(panel.x[i]) || !std::isfinite(panel.y[i])) continue;
      svg += "<circle cx=\"" + fmt(f.px(panel.x[i]), 6) + "\" cy=\"" + fmt(f.py(panel.y[i]), 6) +
             "\" r=\"3\" fill=\"#1f77b4\" fill-opacity=\"0.6\"/>\n";
    }
    svg += "</g>\n";
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace patrolsim::plots
