#include "layerlab/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace layerlab {

namespace {

std::string fmt(double v, const char* spec = "%.4g") {
  char buf[48];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&':
        out += "&amp;";
        break;
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      default:
        out += c;
    }
  }
  return out;
}

// Blue-white-red diverging map over t in [0, 1].
std::string colormap(double t) {
  t = std::clamp(t, 0.0, 1.0);
  auto lerp = [](double a, double b, double u) { return a + (b - a) * u; };
  double r, g, b;
  if (t < 0.5) {
    const double u = t * 2.0;
    r = lerp(33, 247, u);
    g = lerp(102, 247, u);
    b = lerp(172, 247, u);
  } else {
    const double u = (t - 0.5) * 2.0;
    r = lerp(247, 178, u);
    g = lerp(247, 24, u);
    b = lerp(247, 43, u);
  }
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", static_cast<int>(r), static_cast<int>(g),
                static_cast<int>(b));
  return buf;
}

}  // namespace

std::string render_heatmap(const HeatmapSpec& spec) {
  const double cell = 42.0;
  const double left = 110.0, top = 50.0, right = 30.0, bottom = 70.0;
  const double w = left + cell * static_cast<double>(spec.cols) + right;
  const double h = top + cell * static_cast<double>(spec.rows) + bottom;

  double vmin = spec.vmin.value_or(std::numeric_limits<double>::infinity());
  double vmax = spec.vmax.value_or(-std::numeric_limits<double>::infinity());
  if (!spec.vmin || !spec.vmax) {
    for (const auto& c : spec.cells) {
      if (!c) continue;
      vmin = std::min(vmin, *c);
      vmax = std::max(vmax, *c);
    }
    if (!std::isfinite(vmin)) {
      vmin = 0.0;
      vmax = 1.0;
    }
    if (vmax - vmin < 1e-12) {
      vmin -= 0.5;
      vmax += 0.5;
    }
  }

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(w) << "\" height=\""
     << fmt(h) << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<text x=\"" << fmt(w / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
     << escape(spec.title) << "</text>\n";
  for (int64_t i = 0; i < spec.rows; ++i) {
    for (int64_t j = 0; j < spec.cols; ++j) {
      const auto& c = spec.cells[static_cast<size_t>(i * spec.cols + j)];
      const double x = left + cell * static_cast<double>(j);
      const double y = top + cell * static_cast<double>(i);
      std::string fill = "#d9d9d9";
      if (c) {
        const double t = (*c - vmin) / (vmax - vmin);
        fill = colormap(t);
      }
      os << "<rect class=\"cell\" x=\"" << fmt(x) << "\" y=\"" << fmt(y) << "\" width=\""
         << fmt(cell) << "\" height=\"" << fmt(cell) << "\" fill=\"" << fill
         << "\" stroke=\"#ffffff\"/>\n";
      if (c)
        os << "<text x=\"" << fmt(x + cell / 2) << "\" y=\"" << fmt(y + cell / 2 + 4)
           << "\" text-anchor=\"middle\" font-size=\"9\">" << fmt(*c, "%.3f") << "</text>\n";
    }
  }
  for (int64_t i = 0; i < spec.rows; ++i) {
    const std::string label =
        i < static_cast<int64_t>(spec.row_labels.size()) ? spec.row_labels[static_cast<size_t>(i)] : "";
    os << "<text x=\"" << fmt(left - 8) << "\" y=\""
       << fmt(top + cell * (static_cast<double>(i) + 0.5) + 4)
       << "\" text-anchor=\"end\">" << escape(label) << "</text>\n";
  }
  for (int64_t j = 0; j < spec.cols; ++j) {
    const std::string label =
        j < static_cast<int64_t>(spec.col_labels.size()) ? spec.col_labels[static_cast<size_t>(j)] : "";
    os << "<text x=\"" << fmt(left + cell * (static_cast<double>(j) + 0.5)) << "\" y=\""
       << fmt(top + cell * static_cast<double>(spec.rows) + 16)
       << "\" text-anchor=\"middle\">" << escape(label) << "</text>\n";
  }
  os << "<text x=\"" << fmt(left + cell * static_cast<double>(spec.cols) / 2) << "\" y=\""
     << fmt(h - 26) << "\" text-anchor=\"middle\">" << escape(spec.x_label) << "</text>\n";
  os << "<text x=\"16\" y=\"" << fmt(top + cell * static_cast<double>(spec.rows) / 2)
     << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << fmt(top + cell * static_cast<double>(spec.rows) / 2) << ")\">" << escape(spec.y_label)
     << "</text>\n";
  // color scale reference
  os << "<text x=\"" << fmt(w - right) << "\" y=\"" << fmt(h - 8)
     << "\" text-anchor=\"end\" font-size=\"9\">" << fmt(vmin, "%.3f") << " .. "
     << fmt(vmax, "%.3f") << "</text>\n";
  os << "</svg>\n";
  return os.str();
}

std::string render_line_chart(const LineChartSpec& spec) {
  const double left = 70.0, top = 40.0, right = 150.0, bottom = 50.0;
  const double plot_w = 420.0, plot_h = 260.0;
  const double w = left + plot_w + right, h = top + plot_h + bottom;

  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  for (const auto& s : spec.series) {
    for (double v : s.x) {
      xmin = std::min(xmin, v);
      xmax = std::max(xmax, v);
    }
    for (double v : s.y) {
      ymin = std::min(ymin, v);
      ymax = std::max(ymax, v);
    }
  }
  if (!std::isfinite(xmin)) {
    xmin = 0.0;
    xmax = 1.0;
  }
  if (!std::isfinite(ymin)) {
    ymin = 0.0;
    ymax = 1.0;
  }
  if (xmax - xmin < 1e-12) xmax = xmin + 1.0;
  if (ymax - ymin < 1e-12) {
    ymin -= 0.5;
    ymax += 0.5;
  }
  const double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;

  auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * plot_w; };
  auto py = [&](double y) { return top + plot_h - (y - ymin) / (ymax - ymin) * plot_h; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(w) << "\" height=\""
     << fmt(h) << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<text x=\"" << fmt(left + plot_w / 2) << "\" y=\"20\" text-anchor=\"middle\" "
     << "font-size=\"14\">" << escape(spec.title) << "</text>\n";
  os << "<rect x=\"" << fmt(left) << "\" y=\"" << fmt(top) << "\" width=\"" << fmt(plot_w)
     << "\" height=\"" << fmt(plot_h) << "\" fill=\"none\" stroke=\"#333333\"/>\n";

  for (int t = 0; t <= 4; ++t) {
    const double fx = xmin + (xmax - xmin) * static_cast<double>(t) / 4.0;
    const double fy = ymin + (ymax - ymin) * static_cast<double>(t) / 4.0;
    os << "<line x1=\"" << fmt(px(fx)) << "\" y1=\"" << fmt(top + plot_h) << "\" x2=\""
       << fmt(px(fx)) << "\" y2=\"" << fmt(top + plot_h + 5) << "\" stroke=\"#333333\"/>\n";
    os << "<text x=\"" << fmt(px(fx)) << "\" y=\"" << fmt(top + plot_h + 18)
       << "\" text-anchor=\"middle\" font-size=\"9\">" << fmt(fx) << "</text>\n";
    os << "<line x1=\"" << fmt(left - 5) << "\" y1=\"" << fmt(py(fy)) << "\" x2=\"" << fmt(left)
       << "\" y2=\"" << fmt(py(fy)) << "\" stroke=\"#333333\"/>\n";
    os << "<text x=\"" << fmt(left - 8) << "\" y=\"" << fmt(py(fy) + 3)
       << "\" text-anchor=\"end\" font-size=\"9\">" << fmt(fy) << "</text>\n";
  }

  double legend_y = top + 10;
  for (const auto& s : spec.series) {
    if (s.x.empty()) continue;
    os << "<polyline class=\"series\" fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\""
       << fmt(s.width) << "\"";
    if (s.dashed) os << " stroke-dasharray=\"6 4\"";
    os << " points=\"";
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (i) os << " ";
      os << fmt(px(s.x[i])) << "," << fmt(py(s.y[i]));
    }
    os << "\"/>\n";
    os << "<line x1=\"" << fmt(left + plot_w + 10) << "\" y1=\"" << fmt(legend_y) << "\" x2=\""
       << fmt(left + plot_w + 30) << "\" y2=\"" << fmt(legend_y) << "\" stroke=\"" << s.color
       << "\" stroke-width=\"" << fmt(s.width) << "\"" << (s.dashed ? " stroke-dasharray=\"6 4\"" : "")
       << "/>\n";
    os << "<text x=\"" << fmt(left + plot_w + 34) << "\" y=\"" << fmt(legend_y + 3)
       << "\" font-size=\"9\">" << escape(s.name) << "</text>\n";
    legend_y += 14;
  }

  os << "<text x=\"" << fmt(left + plot_w / 2) << "\" y=\"" << fmt(h - 10)
     << "\" text-anchor=\"middle\">" << escape(spec.x_label) << "</text>\n";
  os << "<text x=\"16\" y=\"" << fmt(top + plot_h / 2)
     << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << fmt(top + plot_h / 2) << ")\">"
     << escape(spec.y_label) << "</text>\n";
  os << "</svg>\n";
  return os.str();
}

}  // namespace layerlab
