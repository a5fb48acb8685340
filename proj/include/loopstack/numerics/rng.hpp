#pragma once

#include <cstdint>

namespace loopstack {

/// SplitMix64 (Steele, Lea, Flood 2014): state += 0x9E3779B97F4A7C15, then a
/// xor-shift-multiply finalizer. Portable and identical on every platform;
/// normal deviates use Box-Muller on top of it so no std:: distribution
/// (whose algorithms are implementation-defined) is involved.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) noexcept : state_(seed) {}

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;
  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n) noexcept;
  double normal() noexcept;
  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

  std::uint64_t seed_state() const noexcept { return state_; }
  /// Number of 64-bit draws consumed so far.
  std::uint64_t position() const noexcept { return drawn_; }

 private:
  std::uint64_t state_;
  std::uint64_t drawn_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace loopstack
