#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace flowdehaze {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  bool markers = true;
  bool dashed = false;
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
  bool identity_line = false;  // dashed y = x over the shared data range
  bool log_x = false;
};

/// Renders a simple line/scatter chart as standalone SVG text.
std::string render_svg(const PlotSpec& spec, int width = 640, int height = 480);
void write_svg(const std::filesystem::path& path, const PlotSpec& spec);

}  // namespace flowdehaze
