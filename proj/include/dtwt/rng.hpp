#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace dtwt {

/// Counter-based generator: draw (seed, stream, counter) -> 64 bits through
/// SplitMix64 finalizers. Any draw can be recomputed without replaying a sequence.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream) : key_(mix(seed ^ mix(stream))) {}

  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  std::uint64_t bits(std::uint64_t counter) const { return mix(key_ + counter * 0x9E3779B97F4A7C15ull); }

  /// Uniform in [0, 1).
  double uniform(std::uint64_t counter) const { return static_cast<double>(bits(counter) >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller on counters 2c and 2c+1 (cosine branch).
  double normal(std::uint64_t counter) const {
    const double u1 = 1.0 - uniform(2 * counter);  // (0, 1]
    const double u2 = uniform(2 * counter + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Sequential convenience interface.
  double next_uniform() { return uniform(counter_++); }
  double next_normal() { return normal(counter_++); }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace dtwt
