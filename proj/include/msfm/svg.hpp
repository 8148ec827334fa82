#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

namespace msfm::svg {

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;  // (x, y)
};

namespace detail {

inline std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                 "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};
  return colors[i % 8];
}

}  // namespace detail

/// Writes a self-contained line chart. Axis ranges come from the data with a
/// small pad; single-point series render as markers.
inline void write_line_chart(std::ostream& out, const std::string& title,
                             const std::string& x_label,
                             const std::string& y_label,
                             const std::vector<Series>& series,
                             int width = 860, int height = 480) {
  const double ml = 70, mr = 180, mt = 48, mb = 56;
  const double pw = width - ml - mr;
  const double ph = height - mt - mb;

  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0;
  double y0 = x0, y1 = -x0;
  for (const Series& s : series)
    for (const auto& [x, y] : s.points) {
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  if (!(x0 <= x1)) {
    x0 = 0;
    x1 = 1;
    y0 = 0;
    y1 = 1;
  }
  if (x1 - x0 < 1e-12) {
    x0 -= 0.5;
    x1 += 0.5;
  }
  if (y1 - y0 < 1e-12) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  const double ypad = 0.05 * (y1 - y0);
  y0 -= ypad;
  y1 += ypad;

  auto px = [&](double x) { return ml + pw * (x - x0) / (x1 - x0); };
  auto py = [&](double y) { return mt + ph * (1.0 - (y - y0) / (y1 - y0)); };

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << ' '
      << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << ml << "\" y=\"24\" font-family=\"sans-serif\" "
         "font-size=\"16\" font-weight=\"bold\">"
      << title << "</text>\n";

  // axes with five ticks per side
  out << "<g font-family=\"sans-serif\" font-size=\"11\" fill=\"#333\">\n";
  for (int t = 0; t <= 4; ++t) {
    const double fx = x0 + (x1 - x0) * t / 4.0;
    const double fy = y0 + (y1 - y0) * t / 4.0;
    out << "<line x1=\"" << detail::fmt(px(fx)) << "\" y1=\"" << mt
        << "\" x2=\"" << detail::fmt(px(fx)) << "\" y2=\"" << mt + ph
        << "\" stroke=\"#ddd\"/>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << detail::fmt(py(fy))
        << "\" x2=\"" << ml + pw << "\" y2=\"" << detail::fmt(py(fy))
        << "\" stroke=\"#ddd\"/>\n";
    out << "<text x=\"" << detail::fmt(px(fx)) << "\" y=\"" << mt + ph + 18
        << "\" text-anchor=\"middle\">" << detail::fmt(fx) << "</text>\n";
    out << "<text x=\"" << ml - 8 << "\" y=\"" << detail::fmt(py(fy) + 4)
        << "\" text-anchor=\"end\">" << detail::fmt(fy) << "</text>\n";
  }
  out << "</g>\n";
  out << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\""
      << detail::fmt(pw) << "\" height=\"" << detail::fmt(ph)
      << "\" fill=\"none\" stroke=\"#333\"/>\n";
  out << "<text x=\"" << ml + pw / 2 << "\" y=\"" << height - 12
      << "\" font-family=\"sans-serif\" font-size=\"13\" "
         "text-anchor=\"middle\">"
      << x_label << "</text>\n";
  out << "<text x=\"18\" y=\"" << mt + ph / 2
      << "\" font-family=\"sans-serif\" font-size=\"13\" "
         "text-anchor=\"middle\" transform=\"rotate(-90 18 "
      << mt + ph / 2 << ")\">" << y_label << "</text>\n";

  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = detail::palette(i);
    if (series[i].points.size() > 1) {
      out << "<polyline fill=\"none\" stroke=\"" << color
          << "\" stroke-width=\"1.8\" points=\"";
      for (const auto& [x, y] : series[i].points)
        out << detail::fmt(px(x)) << ',' << detail::fmt(py(y)) << ' ';
      out << "\"/>\n";
    }
    for (const auto& [x, y] : series[i].points)
      out << "<circle cx=\"" << detail::fmt(px(x)) << "\" cy=\""
          << detail::fmt(py(y)) << "\" r=\"2.4\" fill=\"" << color
          << "\"/>\n";
    // legend
    const double ly = mt + 16.0 * i;
    out << "<line x1=\"" << ml + pw + 14 << "\" y1=\"" << ly << "\" x2=\""
        << ml + pw + 38 << "\" y2=\"" << ly << "\" stroke=\"" << color
        << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << ml + pw + 44 << "\" y=\"" << ly + 4
        << "\" font-family=\"sans-serif\" font-size=\"12\">"
        << series[i].label << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace msfm::svg
