// Seeded random streams with a fixed normal generator.
//
// Replicates, chains and SPSA measurements each get their own stream derived
// from (seed, salt), so results are independent of how work is scheduled
// across threads. The Gaussian draw is a cache-free Box-Muller so the stream
// position depends only on the number of draws, not on library internals.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "splitsmc/types.hpp"

namespace splitsmc {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : gen_(splitmix64(seed)) {}

  // uniform on [0,1)
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // uniform on (0,1]
  double uniform_pos() {
    return (static_cast<double>(gen_() >> 11) + 1.0) * 0x1.0p-53;
  }

  double normal() {
    const double u1 = uniform_pos();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  Vec normal_vec(int n) {
    Vec z(n);
    for (int i = 0; i < n; ++i) z[i] = normal();
    return z;
  }

  std::uint64_t raw() { return gen_(); }

 private:
  std::mt19937_64 gen_;
};

// Independent substream for task `salt` of a run seeded with `seed`.
inline RngStream make_stream(std::uint64_t seed, std::uint64_t salt) {
  return RngStream(splitmix64(seed ^ (0xD1B54A32D192ED03ULL * (salt + 1))));
}

}  // namespace splitsmc
