#include "gridsight/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "gridsight/common.hpp"
#include "gridsight/png_io.hpp"

namespace gridsight::plot {

namespace {

// 5x7 glyphs, 5 LSBs per row.
const std::map<char, std::array<std::uint8_t, 7>>& font() {
  static const std::map<char, std::array<std::uint8_t, 7>> f = {
      {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}},
      {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
      {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}},
      {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
      {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},
      {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
      {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},
      {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
      {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},
      {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
      {'a', {0x00, 0x00, 0x0E, 0x01, 0x0F, 0x11, 0x0F}},
      {'b', {0x10, 0x10, 0x16, 0x19, 0x11, 0x11, 0x1E}},
      {'c', {0x00, 0x00, 0x0E, 0x10, 0x10, 0x11, 0x0E}},
      {'d', {0x01, 0x01, 0x0D, 0x13, 0x11, 0x11, 0x0F}},
      {'e', {0x00, 0x00, 0x0E, 0x11, 0x1F, 0x10, 0x0E}},
      {'f', {0x06, 0x09, 0x08, 0x1C, 0x08, 0x08, 0x08}},
      {'g', {0x00, 0x0F, 0x11, 0x11, 0x0F, 0x01, 0x0E}},
      {'h', {0x10, 0x10, 0x16, 0x19, 0x11, 0x11, 0x11}},
      {'i', {0x04, 0x00, 0x0C, 0x04, 0x04, 0x04, 0x0E}},
      {'j', {0x02, 0x00, 0x06, 0x02, 0x02, 0x12, 0x0C}},
      {'k', {0x10, 0x10, 0x12, 0x14, 0x18, 0x14, 0x12}},
      {'l', {0x0C, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
      {'m', {0x00, 0x00, 0x1A, 0x15, 0x15, 0x15, 0x15}},
      {'n', {0x00, 0x00, 0x16, 0x19, 0x11, 0x11, 0x11}},
      {'o', {0x00, 0x00, 0x0E, 0x11, 0x11, 0x11, 0x0E}},
      {'p', {0x00, 0x00, 0x1E, 0x11, 0x1E, 0x10, 0x10}},
      {'q', {0x00, 0x00, 0x0D, 0x13, 0x0F, 0x01, 0x01}},
      {'r', {0x00, 0x00, 0x16, 0x19, 0x10, 0x10, 0x10}},
      {'s', {0x00, 0x00, 0x0E, 0x10, 0x0E, 0x01, 0x1E}},
      {'t', {0x08, 0x08, 0x1C, 0x08, 0x08, 0x09, 0x06}},
      {'u', {0x00, 0x00, 0x11, 0x11, 0x11, 0x13, 0x0D}},
      {'v', {0x00, 0x00, 0x11, 0x11, 0x11, 0x0A, 0x04}},
      {'w', {0x00, 0x00, 0x11, 0x11, 0x15, 0x15, 0x0A}},
      {'x', {0x00, 0x00, 0x11, 0x0A, 0x04, 0x0A, 0x11}},
      {'y', {0x00, 0x00, 0x11, 0x11, 0x0F, 0x01, 0x0E}},
      {'z', {0x00, 0x00, 0x1F, 0x02, 0x04, 0x08, 0x1F}},
      {' ', {0, 0, 0, 0, 0, 0, 0}},
      {'.', {0, 0, 0, 0, 0, 0x0C, 0x0C}},
      {',', {0, 0, 0, 0, 0, 0x04, 0x08}},
      {'-', {0, 0, 0, 0x1F, 0, 0, 0}},
      {'+', {0, 0x04, 0x04, 0x1F, 0x04, 0x04, 0}},
      {':', {0, 0x0C, 0x0C, 0, 0x0C, 0x0C, 0}},
      {'/', {0x01, 0x02, 0x04, 0x04, 0x08, 0x10, 0}},
      {'%', {0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03}},
      {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}},
      {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
      {'=', {0, 0, 0x1F, 0, 0x1F, 0, 0}},
      {'_', {0, 0, 0, 0, 0, 0, 0x1F}},
  };
  return f;
}

void put_px(TensorF& image, int x, int y, const img::Color& c) {
  if (x < 0 || y < 0 || x >= image.dim(2) || y >= image.dim(1)) return;
  for (int ch = 0; ch < 3; ++ch) image.at(ch, y, x) = c[static_cast<std::size_t>(ch)];
}

void draw_line(TensorF& image, double x0, double y0, double x1, double y1, const img::Color& c) {
  const double dx = x1 - x0, dy = y1 - y0;
  const int steps = std::max(1, static_cast<int>(std::ceil(std::max(std::abs(dx), std::abs(dy)))));
  for (int s = 0; s <= steps; ++s) {
    const double t = static_cast<double>(s) / steps;
    put_px(image, static_cast<int>(std::lround(x0 + t * dx)),
           static_cast<int>(std::lround(y0 + t * dy)), c);
  }
}

std::string format_tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  for (char* p = buf; *p; ++p) *p = static_cast<char>(std::tolower(*p));
  return buf;
}

}  // namespace

void draw_text(TensorF& image, int x, int y, const std::string& text, const img::Color& color,
               int scale) {
  int cx = x;
  for (char raw : text) {
    const char ch = static_cast<char>(std::tolower(static_cast<unsigned char>(raw)));
    auto it = font().find(ch);
    if (it == font().end()) {
      cx += 6 * scale;
      continue;
    }
    for (int row = 0; row < 7; ++row) {
      for (int col = 0; col < 5; ++col) {
        if (it->second[static_cast<std::size_t>(row)] & (1 << (4 - col))) {
          for (int sy = 0; sy < scale; ++sy)
            for (int sx = 0; sx < scale; ++sx)
              put_px(image, cx + col * scale + sx, y + row * scale + sy, color);
        }
      }
    }
    cx += 6 * scale;
  }
}

TensorF LineChart::render() const {
  const img::Color bg{1.0f, 1.0f, 1.0f};
  const img::Color axis{0.15f, 0.15f, 0.15f};
  const img::Color grid{0.88f, 0.88f, 0.88f};
  TensorF image = img::make(height, width, bg);

  const int ml = 64, mr = 16, mt = 28, mb = 44;
  const int px0 = ml, px1 = width - mr, py0 = mt, py1 = height - mb;

  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series) {
    for (double v : s.x) {
      xmin = std::min(xmin, v);
      xmax = std::max(xmax, v);
    }
    for (double v : s.y) {
      ymin = std::min(ymin, v);
      ymax = std::max(ymax, v);
    }
  }
  if (xmin > xmax) {
    xmin = 0;
    xmax = 1;
  }
  if (ymin > ymax) {
    ymin = 0;
    ymax = 1;
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  const double ypad = (ymax - ymin) * 0.08;
  ymin -= ypad;
  ymax += ypad;

  auto to_px = [&](double x, double y) {
    const double fx = (x - xmin) / (xmax - xmin);
    const double fy = (y - ymin) / (ymax - ymin);
    return std::pair<double, double>{px0 + fx * (px1 - px0), py1 - fy * (py1 - py0)};
  };

  for (int tick = 0; tick <= 4; ++tick) {
    const double fy = tick / 4.0;
    const double yv = ymin + fy * (ymax - ymin);
    const int py = static_cast<int>(std::lround(py1 - fy * (py1 - py0)));
    draw_line(image, px0, py, px1, py, grid);
    draw_text(image, 4, py - 3, format_tick(yv), axis);
    const double fx = tick / 4.0;
    const double xv = xmin + fx * (xmax - xmin);
    const int px = static_cast<int>(std::lround(px0 + fx * (px1 - px0)));
    draw_line(image, px, py0, px, py1, grid);
    draw_text(image, px - 8, py1 + 6, format_tick(xv), axis);
  }
  draw_line(image, px0, py0, px0, py1, axis);
  draw_line(image, px0, py1, px1, py1, axis);
  draw_text(image, px0, 8, title, axis);
  draw_text(image, (px0 + px1) / 2 - 3 * static_cast<int>(x_label.size()), height - 14, x_label,
            axis);
  draw_text(image, 4, py0 - 12, y_label, axis);

  int legend_y = py0 + 4;
  for (const auto& s : series) {
    for (std::size_t i = 1; i < s.x.size() && i < s.y.size(); ++i) {
      const auto [ax, ay] = to_px(s.x[i - 1], s.y[i - 1]);
      const auto [bx, by] = to_px(s.x[i], s.y[i]);
      draw_line(image, ax, ay, bx, by, s.color);
      draw_line(image, ax, ay + 1, bx, by + 1, s.color);
    }
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      const auto [ax, ay] = to_px(s.x[i], s.y[i]);
      img::fill_rect(image, static_cast<float>(ax), static_cast<float>(ay), 5, 5, s.color);
    }
    img::fill_rect(image, px1 - 120.0f + 4, legend_y + 3.0f, 7, 7, s.color);
    draw_text(image, px1 - 108, legend_y, s.label, axis);
    legend_y += 12;
  }
  return image;
}

void LineChart::save_png(const std::string& path) const {
  const TensorF image = render();
  png::write_rgb8(path, image.dim(2), image.dim(1), img::to_rgb8(image));
}

}  // namespace gridsight::plot
