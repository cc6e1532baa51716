#pragma once

#include <cstdint>
#include <optional>
#include <random>

namespace affes {

/// Seeded generator with platform-independent derived distributions.
///
/// The standard library's distributions are implementation-defined, so
/// everything here is built directly on the raw mt19937_64 stream. Integer
/// draws (shuffles, subsets) are bit-identical on every platform; real draws
/// additionally depend on libm for normal().
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform01();

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Uniform integer in [0, n), unbiased. n must be > 0.
  std::uint64_t below(std::uint64_t n);

  /// Standard normal (Marsaglia polar method).
  double normal();

  bool coin() { return (engine_() >> 63) != 0; }

 private:
  std::mt19937_64 engine_;
  std::optional<double> spare_;
};

/// SplitMix64 finalizer; used to derive independent streams from (seed, key) pairs.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t key);

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t k1, std::uint64_t k2) {
  return mix_seed(mix_seed(seed, k1), k2);
}

}  // namespace affes
