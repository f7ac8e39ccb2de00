#pragma once

#include <cstdint>
#include <string>
#include <vector>

// Minimal PNG writer/reader (8-bit RGB, zlib-backed). Enough for the demo
// frames and plot output; the reader exists so tests can check pixels.

namespace gridsight::png {

void write_rgb8(const std::string& path, int width, int height,
                const std::vector<std::uint8_t>& rgb);

struct ImageRgb8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;
};

ImageRgb8 read_rgb8(const std::string& path);

}  // namespace gridsight::png
