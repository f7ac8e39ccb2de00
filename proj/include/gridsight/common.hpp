#pragma once

#include <cstdint>
#include <cmath>
#include <stdexcept>
#include <string>

namespace gridsight {

// Process exit codes used by the CLI. Library code throws the matching
// exception type; main() translates.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitNumeric = 4;

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// splitmix64: used to derive independent per-sequence / per-stream seeds
// from a root seed without correlated low bits.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t root, std::uint64_t stream) {
  return splitmix64(root ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

// Deterministic RNG. The engine is std::mt19937_64 (bit-exact by the
// standard); the distributions are implemented here because the standard
// library's are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : s_{splitmix64(seed), splitmix64(seed ^ 0xda3e39cb94b95bdbULL)} {
    if (s_[0] == 0 && s_[1] == 0) s_[0] = 1;
  }

  std::uint64_t next_u64() {
    // xoshiro-style xorshift128+; small, portable, plenty for simulation.
    std::uint64_t x = s_[0];
    const std::uint64_t y = s_[1];
    s_[0] = y;
    x ^= x << 23;
    s_[1] = x ^ y ^ (x >> 17) ^ (y >> 26);
    return s_[1] + y;
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n) { return n ? next_u64() % n : 0; }

  bool bernoulli(double p) { return uniform() < p; }

  double normal(double mu = 0.0, double sigma = 1.0) {
    if (have_spare_) {
      have_spare_ = false;
      return mu + sigma * spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return mu + sigma * r * std::cos(theta);
  }

 private:
  std::uint64_t s_[2];
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// FNV-1a, used for cheap content-equality digests (not cryptographic).
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t file_digest(const std::string& path);

// Worker count for batch-parallel sections; GRIDSIGHT_THREADS overrides.
int worker_count();

}  // namespace gridsight
