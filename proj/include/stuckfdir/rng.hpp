#pragma once

// Portable seeded randomness.
//
// The engine is std::mt19937_64, whose output sequence is fixed by the C++
// standard. The standard distributions are implementation-defined, so the
// uniform and Gaussian transforms are implemented here:
//   uniform()  = (next() >> 11) * 2^-53                      in [0, 1)
//   gaussian() = Box-Muller on (1 - uniform(), uniform()); both outputs of
//                a pair are used, cosine branch first.
// Sub-seeds are derived with the SplitMix64 finalizer.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string_view>

namespace stuckfdir {

/// SplitMix64 finalizer applied to `x + golden gamma`.
std::uint64_t splitmix64(std::uint64_t x);

/// Derives an independent sub-seed from a parent seed and a stream tag.
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t stream);
std::uint64_t derive_seed(std::uint64_t parent, std::string_view stream);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer in [lo, hi] (inclusive). Requires lo <= hi.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  /// Standard normal deviate.
  double gaussian();

 private:
  std::mt19937_64 engine_;
  std::optional<double> spare_;
};

}  // namespace stuckfdir
