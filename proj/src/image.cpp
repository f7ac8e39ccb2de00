#include "gridsight/image.hpp"

#include <algorithm>
#include <cmath>

namespace gridsight::img {

TensorF make(int h, int w, const Color& fill) {
  TensorF image({3, h, w});
  for (int c = 0; c < 3; ++c) {
    float* plane = image.data() + static_cast<std::size_t>(c) * h * w;
    std::fill(plane, plane + static_cast<std::size_t>(h) * w, fill[static_cast<std::size_t>(c)]);
  }
  return image;
}

namespace {

struct PixelBox {
  int x0, x1, y0, y1;  // half-open
};

PixelBox pixel_box(const TensorF& image, float cx, float cy, float w, float h) {
  const int ih = image.dim(1), iw = image.dim(2);
  PixelBox b;
  b.x0 = std::max(0, static_cast<int>(std::lround(cx - w / 2)));
  b.x1 = std::min(iw, static_cast<int>(std::lround(cx + w / 2)));
  b.y0 = std::max(0, static_cast<int>(std::lround(cy - h / 2)));
  b.y1 = std::min(ih, static_cast<int>(std::lround(cy + h / 2)));
  return b;
}

void put(TensorF& image, int x, int y, const Color& color) {
  const int ih = image.dim(1), iw = image.dim(2);
  if (x < 0 || x >= iw || y < 0 || y >= ih) return;
  for (int c = 0; c < 3; ++c) image.at(c, y, x) = color[static_cast<std::size_t>(c)];
}

}  // namespace

void fill_rect(TensorF& image, float cx, float cy, float w, float h, const Color& color) {
  const PixelBox b = pixel_box(image, cx, cy, w, h);
  const int ih = image.dim(1), iw = image.dim(2);
  for (int c = 0; c < 3; ++c) {
    float* plane = image.data() + static_cast<std::size_t>(c) * ih * iw;
    for (int y = b.y0; y < b.y1; ++y) {
      float* row = plane + static_cast<std::size_t>(y) * iw;
      for (int x = b.x0; x < b.x1; ++x) row[x] = color[static_cast<std::size_t>(c)];
    }
  }
}

void draw_rect_outline(TensorF& image, float cx, float cy, float w, float h, const Color& color) {
  const PixelBox b = pixel_box(image, cx, cy, w, h);
  for (int x = b.x0; x < b.x1; ++x) {
    put(image, x, b.y0, color);
    put(image, x, b.y1 - 1, color);
  }
  for (int y = b.y0; y < b.y1; ++y) {
    put(image, b.x0, y, color);
    put(image, b.x1 - 1, y, color);
  }
}

TensorF crop_resize(const TensorF& image, float cx, float cy, float w, float h, int oh, int ow) {
  const int ih = image.dim(1), iw = image.dim(2);
  TensorF out({3, oh, ow});
  const float x_left = cx - w / 2;
  const float y_top = cy - h / 2;
  for (int oy = 0; oy < oh; ++oy) {
    const float sy = y_top + (static_cast<float>(oy) + 0.5f) * h / static_cast<float>(oh) - 0.5f;
    const int y0 = static_cast<int>(std::floor(sy));
    const float fy = sy - static_cast<float>(y0);
    for (int ox = 0; ox < ow; ++ox) {
      const float sx = x_left + (static_cast<float>(ox) + 0.5f) * w / static_cast<float>(ow) - 0.5f;
      const int x0 = static_cast<int>(std::floor(sx));
      const float fx = sx - static_cast<float>(x0);
      for (int c = 0; c < 3; ++c) {
        auto sample = [&](int y, int x) -> float {
          if (x < 0 || x >= iw || y < 0 || y >= ih) return 0.0f;
          return image.at(c, y, x);
        };
        const float v = (1 - fy) * ((1 - fx) * sample(y0, x0) + fx * sample(y0, x0 + 1)) +
                        fy * ((1 - fx) * sample(y0 + 1, x0) + fx * sample(y0 + 1, x0 + 1));
        out.at(c, oy, ox) = v;
      }
    }
  }
  return out;
}

std::vector<std::uint8_t> to_rgb8(const TensorF& image) {
  const int ih = image.dim(1), iw = image.dim(2);
  std::vector<std::uint8_t> out(static_cast<std::size_t>(ih) * iw * 3);
  for (int y = 0; y < ih; ++y)
    for (int x = 0; x < iw; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(image.at(c, y, x), 0.0f, 1.0f);
        out[(static_cast<std::size_t>(y) * iw + x) * 3 + c] =
            static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
  return out;
}

}  // namespace gridsight::img
