#pragma once

#include <cstdint>
#include <cmath>

namespace isflow {

// SplitMix64. All randomized procedures in the library derive their streams
// from a master seed through split(), so every experiment is reproducible
// from the seed recorded in its report.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // deterministic child stream
  Rng split(std::uint64_t stream) const {
    Rng mix(state_ ^ (0x636f9b1a2c0fb4d7ULL + stream * 0x9e3779b97f4a7c15ULL));
    mix.next_u64();
    return Rng(mix.next_u64());
  }

 private:
  std::uint64_t state_;
};

// Halton low-discrepancy sequence (prefix-nested: sample i is the same for
// every sample count, which makes sampled sup-norms monotone in n).
inline double halton(std::uint64_t i, std::uint64_t base) {
  double f = 1.0, r = 0.0;
  std::uint64_t n = i + 1;  // skip the zero point
  while (n > 0) {
    f /= static_cast<double>(base);
    r += f * static_cast<double>(n % base);
    n /= base;
  }
  return r;
}

// 64-bit FNV-1a, used for config hashes in reports.
inline std::uint64_t fnv1a64(const void* data, std::size_t len) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace isflow
