#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace ppreg {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Seed of an independent stream keyed by (master, indices...). Order of
// replicates never matters since each stream depends only on its key.
inline std::uint64_t stream_seed(std::uint64_t master, std::initializer_list<std::uint64_t> keys) {
  std::uint64_t s = master;
  std::uint64_t out = splitmix64(s);
  for (auto k : keys) {
    s ^= k + 0x632BE59BD9B4E019ULL + (out << 6) + (out >> 2);
    out = splitmix64(s);
  }
  return out;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  // Uniform on the open interval (0, 1), from the top 53 bits.
  double uniform() {
    for (;;) {
      double u = static_cast<double>(eng_() >> 11) * 0x1.0p-53;
      if (u > 0.0) return u;
    }
  }

  double exponential() { return -std::log1p(-uniform()); }

  // Marsaglia polar method; the cached second draw keeps streams reproducible.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  std::uint64_t index(std::uint64_t bound) { return eng_() % bound; }

  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace ppreg
