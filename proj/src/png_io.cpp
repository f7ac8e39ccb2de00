#include "gridsight/png_io.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

#include "gridsight/common.hpp"

namespace gridsight::png {

namespace {

void put_u32(std::vector<std::uint8_t>& v, std::uint32_t x) {
  v.push_back(static_cast<std::uint8_t>(x >> 24));
  v.push_back(static_cast<std::uint8_t>(x >> 16));
  v.push_back(static_cast<std::uint8_t>(x >> 8));
  v.push_back(static_cast<std::uint8_t>(x));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
         std::uint32_t(p[3]);
}

void write_chunk(std::vector<std::uint8_t>& out, const char* type,
                 const std::vector<std::uint8_t>& data) {
  put_u32(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const uLong crc = crc32(crc32(0L, nullptr, 0), out.data() + crc_start,
                          static_cast<uInt>(out.size() - crc_start));
  put_u32(out, static_cast<std::uint32_t>(crc));
}

}  // namespace

void write_rgb8(const std::string& path, int width, int height,
                const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != static_cast<std::size_t>(width) * height * 3)
    throw IoError("png: pixel buffer size does not match dimensions");

  // filter 0 per scanline
  std::vector<std::uint8_t> raw;
  raw.reserve(static_cast<std::size_t>(height) * (1 + 3 * width));
  for (int y = 0; y < height; ++y) {
    raw.push_back(0);
    const std::uint8_t* row = rgb.data() + static_cast<std::size_t>(y) * width * 3;
    raw.insert(raw.end(), row, row + static_cast<std::size_t>(width) * 3);
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> compressed(bound);
  if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw IoError("png: deflate failed");
  compressed.resize(bound);

  std::vector<std::uint8_t> out = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  std::vector<std::uint8_t> ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(width));
  put_u32(ihdr, static_cast<std::uint32_t>(height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // RGB
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  write_chunk(out, "IHDR", ihdr);
  write_chunk(out, "IDAT", compressed);
  write_chunk(out, "IEND", {});

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("png: cannot open for write: " + path);
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("png: short write: " + path);
}

ImageRgb8 read_rgb8(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("png: cannot open: " + path);
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)),
                                std::istreambuf_iterator<char>());
  static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  if (buf.size() < 8 || std::memcmp(buf.data(), sig, 8) != 0)
    throw IoError("png: bad signature: " + path);

  ImageRgb8 img;
  std::vector<std::uint8_t> idat;
  std::size_t pos = 8;
  int bit_depth = 0, color_type = -1;
  while (pos + 8 <= buf.size()) {
    const std::uint32_t len = get_u32(buf.data() + pos);
    const char* type = reinterpret_cast<const char*>(buf.data() + pos + 4);
    const std::uint8_t* data = buf.data() + pos + 8;
    if (pos + 12 + len > buf.size()) throw IoError("png: truncated chunk: " + path);
    if (std::memcmp(type, "IHDR", 4) == 0) {
      img.width = static_cast<int>(get_u32(data));
      img.height = static_cast<int>(get_u32(data + 4));
      bit_depth = data[8];
      color_type = data[9];
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      break;
    }
    pos += 12 + len;
  }
  if (bit_depth != 8 || color_type != 2)
    throw IoError("png: reader supports 8-bit RGB only: " + path);

  const std::size_t row_bytes = static_cast<std::size_t>(img.width) * 3;
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(img.height) * (1 + row_bytes));
  uLongf raw_len = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
      raw_len != raw.size())
    throw IoError("png: inflate failed: " + path);

  img.rgb.assign(static_cast<std::size_t>(img.height) * row_bytes, 0);
  auto paeth = [](int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    return pb <= pc ? b : c;
  };
  for (int y = 0; y < img.height; ++y) {
    const std::uint8_t filter = raw[static_cast<std::size_t>(y) * (1 + row_bytes)];
    const std::uint8_t* src = raw.data() + static_cast<std::size_t>(y) * (1 + row_bytes) + 1;
    std::uint8_t* dst = img.rgb.data() + static_cast<std::size_t>(y) * row_bytes;
    const std::uint8_t* up =
        y > 0 ? img.rgb.data() + static_cast<std::size_t>(y - 1) * row_bytes : nullptr;
    for (std::size_t x = 0; x < row_bytes; ++x) {
      const int a = x >= 3 ? dst[x - 3] : 0;
      const int b = up ? up[x] : 0;
      const int c = (up && x >= 3) ? up[x - 3] : 0;
      int v = src[x];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default: throw IoError("png: unsupported filter type");
      }
      dst[x] = static_cast<std::uint8_t>(v & 0xff);
    }
  }
  return img;
}

}  // namespace gridsight::png
