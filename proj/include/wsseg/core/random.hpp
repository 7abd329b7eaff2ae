// wsseg - weakly supervised point cloud segmentation
//
// SplitMix64 generator and the handful of distributions the library needs.
// Everything here is fully specified so results are identical across
// platforms and standard library implementations.

#ifndef WSSEG_CORE_RANDOM_HPP
#define WSSEG_CORE_RANDOM_HPP

#include <cmath>
#include <cstdint>
#include <numeric>
#include <utility>
#include <vector>

namespace wsseg {

/**
 * @brief SplitMix64 (Steele, Lea, Flood 2014).
 *
 * state += 0x9E3779B97F4A7C15, then the output is mixed with multipliers
 * 0xBF58476D1CE4E5B9 and 0x94D049BB133111EB and shifts 30, 27, 31.
 */
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0,1) from the top 53 bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n) without modulo bias (rejection sampling). n > 0.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t threshold = (std::uint64_t(0) - n) % n;  // 2^64 mod n
    for (;;) {
      const std::uint64_t x = next();
      if (x >= threshold) return x % n;
    }
  }

  /// Standard normal via Box-Muller (one value per call, second discarded).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  /// Derives an independent stream for a sub-task.
  SplitMix64 fork(std::uint64_t salt) { return SplitMix64(next() ^ (salt * 0xD1B54A32D192ED03ULL)); }

 private:
  std::uint64_t state_;
};

/// Draws min(count, n) distinct values from [0, n) by partial Fisher-Yates, in draw order.
inline std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t count,
                                                           SplitMix64& rng) {
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  if (count > n) count = n;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(count);
  return pool;
}

}  // namespace wsseg

#endif  // WSSEG_CORE_RANDOM_HPP
