#pragma once

#include <cstdint>
#include <random>

namespace jointsel {

std::uint64_t splitmix64(std::uint64_t x);

/// Seed of substream `stream` of `seed`. Substreams of distinct (seed, stream)
/// pairs are decorrelated by two rounds of SplitMix64 mixing.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// Cross-platform 64-bit generator. The engine is std::mt19937_64, whose output
/// sequence is fixed by the standard; all derived variates are computed here
/// rather than through <random> distributions, which are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on the open interval (0, 1), 53-bit resolution.
  double uniform_open();

  /// Uniform integer in [0, bound) by rejection; bound > 0.
  std::uint64_t uniform_below(std::uint64_t bound);

  /// Standard Gumbel(0, 1) variate.
  double gumbel();

  /// Standard normal variate (Box-Muller, no caching of the second value).
  double normal();

 private:
  std::mt19937_64 engine_;
};

}  // namespace jointsel
