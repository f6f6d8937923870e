// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

namespace snn {

/// Counter-based generator: every draw is a SplitMix64 hash of
/// (seed, counter), so the full state is two integers and the stream is
/// identical on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0, std::uint64_t counter = 0) : seed_(seed), counter_(counter) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64() noexcept;

  /// Uniform in [0, 1) with 24 random bits.
  float uniform_float() noexcept;
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) noexcept;
  /// Standard normal (Box-Muller, one value per call).
  double normal() noexcept;

  /// Independent child stream, derived from this stream's seed and a tag.
  Rng fork(std::uint64_t tag) const noexcept;

  friend bool operator==(const Rng&, const Rng&) = default;

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

}  // namespace snn
