#pragma once

#include <cstdint>
#include <random>

#include "elmi/common.hpp"
#include "elmi/stats.hpp"

namespace elmi {

// splitmix64 finalizer; the standard 64-bit mixer.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Substream derivation: hash(seed, tag). Chains are order-sensitive, so
// mix_seed(mix_seed(s, a), b) != mix_seed(mix_seed(s, b), a).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
  return splitmix64(seed ^ splitmix64(tag + 0x632BE59BD9B4E019ULL));
}

// Deterministic RNG wrapper. mt19937_64 is fully specified by the standard
// and all derived draws go through explicit inverse-CDF constructions, so a
// given seed yields identical streams on every platform and build.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(splitmix64(seed)) {}

  std::uint64_t next_u64() { return eng_(); }

  // uniform on (0,1); never returns 0 or 1
  double uniform() {
    const std::uint64_t bits = eng_() >> 11;  // 53 random bits
    double u = (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
    return u;
  }

  // standard normal via inverse CDF
  double normal() { return normal_quantile(uniform()); }

  // chi-square with integer df as a sum of squared normals
  double chisq(int df) {
    double s = 0.0;
    for (int i = 0; i < df; ++i) {
      const double z = normal();
      s += z * z;
    }
    return s;
  }

  // integer in [0, n)
  int uniform_int(int n) {
    const int k = static_cast<int>(uniform() * n);
    return k >= n ? n - 1 : k;
  }

  // index draw from a probability vector (sums to 1) by CDF inversion
  int categorical(const Eigen::Ref<const Vector>& probs) {
    const double u = uniform();
    double acc = 0.0;
    const int m = static_cast<int>(probs.size());
    for (int i = 0; i < m; ++i) {
      acc += probs[i];
      if (u <= acc) return i;
    }
    return m - 1;  // guard against accumulated rounding
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace elmi
