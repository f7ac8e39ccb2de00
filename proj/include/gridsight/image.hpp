#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "gridsight/tensor.hpp"

// RGB float images as (3, H, W) tensors with values in [0, 1].

namespace gridsight::img {

using Color = std::array<float, 3>;

TensorF make(int h, int w, const Color& fill);

// Fills the axis-aligned box centered at (cx, cy), clipped to the image.
// Pixel rule: x in [lround(cx - w/2), lround(cx + w/2)) and same for y.
void fill_rect(TensorF& image, float cx, float cy, float w, float h, const Color& color);

// 1px-wide rectangle outline (for annotation overlays).
void draw_rect_outline(TensorF& image, float cx, float cy, float w, float h, const Color& color);

// Extracts the box region (bilinear-resampled to oh x ow); samples outside
// the image read as zero.
TensorF crop_resize(const TensorF& image, float cx, float cy, float w, float h, int oh, int ow);

std::vector<std::uint8_t> to_rgb8(const TensorF& image);

}  // namespace gridsight::img
