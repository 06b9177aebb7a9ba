#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace layerlab {

// Minimal SVG figure rendering; keeps report emission free of plotting stacks.

struct HeatmapSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  int64_t rows = 0;
  int64_t cols = 0;
  std::vector<std::optional<double>> cells;  // row-major; missing cells render gray
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;
  std::optional<double> vmin;  // autoscaled when absent
  std::optional<double> vmax;
};

// Each present cell becomes one <rect class="cell"> with an inline value.
std::string render_heatmap(const HeatmapSpec& spec);

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  std::string color = "#1f77b4";
  double width = 1.5;
  bool dashed = false;
};

struct LineChartSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;  // each becomes one <polyline class="series">
};

std::string render_line_chart(const LineChartSpec& spec);

}  // namespace layerlab
