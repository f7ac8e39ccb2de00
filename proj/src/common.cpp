#include "gridsight/common.hpp"

#include <cstdlib>
#include <fstream>
#include <thread>
#include <vector>

namespace gridsight {

std::uint64_t file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for digest: " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    const std::streamsize got = in.gcount();
    if (got > 0) h = fnv1a(buf.data(), static_cast<std::size_t>(got), h);
  }
  return h;
}

int worker_count() {
  if (const char* env = std::getenv("GRIDSIGHT_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

}  // namespace gridsight
