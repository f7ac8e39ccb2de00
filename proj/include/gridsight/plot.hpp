#pragma once

#include <string>
#include <vector>

#include "gridsight/image.hpp"

// Small dependency-free line-chart renderer for the optional report plots
// (latency vs pedestrian count, loss curves, PR curves). Labels use a
// built-in 5x7 bitmap font covering digits, lowercase letters and a few
// symbols.

namespace gridsight::plot {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  img::Color color{0.9f, 0.4f, 0.2f};
};

struct LineChart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
  int width = 640;
  int height = 400;

  TensorF render() const;
  void save_png(const std::string& path) const;
};

// Exposed for reuse by the demo renderer.
void draw_text(TensorF& image, int x, int y, const std::string& text, const img::Color& color,
               int scale = 1);

}  // namespace gridsight::plot
