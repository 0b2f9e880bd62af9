#pragma once

// Minimal SVG line plots for loss curves and level time series.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

namespace stormnet::svg {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;  // NaN breaks the line
  std::string color = "#1f77b4";
  bool dashed = false;
};

struct HLine {
  std::string name;
  double y = 0.0;
  std::string color = "#999999";
};

struct Plot {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
  std::vector<HLine> hlines;
  bool log_y = false;
};

namespace detail {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

}  // namespace detail

inline std::string render(const Plot& p, int width = 800, int height = 420) {
  const double left = 70, right = 160, top = 40, bottom = 50;
  const double pw = width - left - right, ph = height - top - bottom;
  auto ty = [&](double y) { return p.log_y ? std::log10(y) : y; };

  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : p.series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i]) || (p.log_y && s.y[i] <= 0)) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, ty(s.y[i]));
      y1 = std::max(y1, ty(s.y[i]));
    }
  for (const auto& h : p.hlines) {
    y0 = std::min(y0, ty(h.y));
    y1 = std::max(y1, ty(h.y));
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto sx = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto sy = [&](double y) { return top + (1.0 - (ty(y) - y0) / (y1 - y0)) * ph; };

  std::string o = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) + "\" height=\"" +
                  std::to_string(height) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o += "<text x=\"" + detail::num(left) + "\" y=\"22\" font-size=\"15\">" + detail::escape(p.title) + "</text>\n";
  o += "<rect x=\"" + detail::num(left) + "\" y=\"" + detail::num(top) + "\" width=\"" + detail::num(pw) + "\" height=\"" +
       detail::num(ph) + "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fy = y0 + (y1 - y0) * i / 4.0, fx = x0 + (x1 - x0) * i / 4.0;
    const double py = top + (1.0 - i / 4.0) * ph, px = left + i / 4.0 * pw;
    o += "<text x=\"" + detail::num(left - 6) + "\" y=\"" + detail::num(py + 4) + "\" text-anchor=\"end\">" +
         detail::tick(p.log_y ? std::pow(10.0, fy) : fy) + "</text>\n";
    o += "<text x=\"" + detail::num(px) + "\" y=\"" + detail::num(top + ph + 16) + "\" text-anchor=\"middle\">" +
         detail::tick(fx) + "</text>\n";
  }
  o += "<text x=\"" + detail::num(left + pw / 2) + "\" y=\"" + detail::num(height - 10.0) + "\" text-anchor=\"middle\">" +
       detail::escape(p.x_label) + "</text>\n";
  o += "<text transform=\"translate(16," + detail::num(top + ph / 2) + ") rotate(-90)\" text-anchor=\"middle\">" +
       detail::escape(p.y_label) + "</text>\n";

  double legend_y = top + 10;
  auto legend = [&](const std::string& name, const std::string& color, bool dashed) {
    o += "<line x1=\"" + detail::num(left + pw + 10) + "\" y1=\"" + detail::num(legend_y) + "\" x2=\"" +
         detail::num(left + pw + 34) + "\" y2=\"" + detail::num(legend_y) + "\" stroke=\"" + color + "\"" +
         (dashed ? " stroke-dasharray=\"5,3\"" : "") + " stroke-width=\"2\"/>\n";
    o += "<text x=\"" + detail::num(left + pw + 40) + "\" y=\"" + detail::num(legend_y + 4) + "\">" + detail::escape(name) +
         "</text>\n";
    legend_y += 18;
  };
  for (const auto& h : p.hlines) {
    o += "<line x1=\"" + detail::num(left) + "\" x2=\"" + detail::num(left + pw) + "\" y1=\"" + detail::num(sy(h.y)) +
         "\" y2=\"" + detail::num(sy(h.y)) + "\" stroke=\"" + h.color + "\" stroke-dasharray=\"2,4\"/>\n";
    legend(h.name, h.color, true);
  }
  for (const auto& s : p.series) {
    std::string pts;
    auto flush = [&] {
      if (!pts.empty()) {
        o += "<polyline fill=\"none\" stroke=\"" + s.color + "\" stroke-width=\"1.5\"" +
             (s.dashed ? " stroke-dasharray=\"5,3\"" : "") + " points=\"" + pts + "\"/>\n";
      }
      pts.clear();
    };
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i]) || (p.log_y && s.y[i] <= 0)) {
        flush();
        continue;
      }
      pts += (pts.empty() ? "" : " ") + detail::num(sx(s.x[i])) + "," + detail::num(sy(s.y[i]));
    }
    flush();
    legend(s.name, s.color, s.dashed);
  }
  o += "</svg>\n";
  return o;
}

}  // namespace stormnet::svg
