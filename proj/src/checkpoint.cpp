#include "gridsight/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "gridsight/common.hpp"

namespace gridsight::ckpt {

namespace {

constexpr char kMagic[4] = {'G', 'S', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ofstream& f, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::ifstream& f, const std::string& path) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  if (!f) throw IoError("checkpoint: truncated file: " + path);
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

}  // namespace

void save(const std::string& path, const nn::ParamStore<float>& params,
          const nlohmann::json& metadata) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint: cannot open for write: " + path);
  f.write(kMagic, 4);
  put_u32(f, kVersion);
  put_u32(f, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, entry] : params) {  // std::map: already name-sorted
    put_u32(f, static_cast<std::uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    f.put(static_cast<char>(0));  // dtype f32
    put_u32(f, static_cast<std::uint32_t>(entry.value.rank()));
    for (int d = 0; d < entry.value.rank(); ++d)
      put_u32(f, static_cast<std::uint32_t>(entry.value.dim(d)));
    static_assert(sizeof(float) == 4);
    f.write(reinterpret_cast<const char*>(entry.value.data()),
            static_cast<std::streamsize>(entry.value.size() * sizeof(float)));
  }
  if (!f) throw IoError("checkpoint: short write: " + path);
  f.close();

  std::ofstream side(path + ".json");
  if (!side) throw IoError("checkpoint: cannot write sidecar: " + path + ".json");
  side << metadata.dump(2) << "\n";
}

void load(const std::string& path, nn::ParamStore<float>& params) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint: cannot open: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("checkpoint: bad magic: " + path);
  const std::uint32_t version = get_u32(f, path);
  if (version != kVersion) throw IoError("checkpoint: unsupported version: " + path);
  const std::uint32_t count = get_u32(f, path);
  if (count != params.size())
    throw IoError("checkpoint: tensor count mismatch (" + std::to_string(count) + " in file, " +
                  std::to_string(params.size()) + " expected): " + path);

  for (std::uint32_t idx = 0; idx < count; ++idx) {
    const std::uint32_t name_len = get_u32(f, path);
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    const int dtype = f.get();
    if (dtype != 0) throw IoError("checkpoint: unsupported dtype tag: " + path);
    const std::uint32_t rank = get_u32(f, path);
    std::vector<int> dims(rank);
    for (auto& d : dims) d = static_cast<int>(get_u32(f, path));
    if (!params.has(name)) throw IoError("checkpoint: unexpected tensor '" + name + "': " + path);
    auto& entry = params.at(name);
    if (entry.value.shape() != dims)
      throw IoError("checkpoint: shape mismatch for '" + name + "': " + path);
    f.read(reinterpret_cast<char*>(entry.value.data()),
           static_cast<std::streamsize>(entry.value.size() * sizeof(float)));
    if (!f) throw IoError("checkpoint: truncated tensor payload: " + path);
  }
}

nlohmann::json load_metadata(const std::string& path) {
  std::ifstream side(path + ".json");
  if (!side) throw IoError("checkpoint: missing sidecar: " + path + ".json");
  nlohmann::json j;
  side >> j;
  return j;
}

}  // namespace gridsight::ckpt
