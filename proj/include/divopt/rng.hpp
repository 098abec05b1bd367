#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <string_view>

namespace divopt {

/// One step of splitmix64; advances `state` and returns the mixed output.
std::uint64_t splitmix64(std::uint64_t& state);

/// Derives an independent sub-seed from a master seed and a fixed label
/// (FNV-1a of the label folded through splitmix64).
std::uint64_t derive_seed(std::uint64_t master, std::string_view label);

/// Derives a sub-seed from a master seed and an integer (e.g. epoch index).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t value);

/// xoshiro256++ (Blackman & Vigna), state filled from splitmix64(seed).
///
/// All derived draws use fixed, documented transforms so streams can be
/// replicated elsewhere:
///   uniform01  -> (next() >> 11) * 2^-53
///   normal     -> Box-Muller on two uniform01 draws, cosine branch first,
///                 sine branch cached for the following call
///   below(n)   -> rejection sampling on next() % n
class Xoshiro256pp {
 public:
  using result_type = std::uint64_t;

  explicit Xoshiro256pp(std::uint64_t seed);

  result_type operator()();

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  double uniform01();
  double uniform(double lo, double hi);
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  std::uint64_t below(std::uint64_t n);

 private:
  std::array<std::uint64_t, 4> s_{};
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace divopt
