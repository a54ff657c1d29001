// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The mtlsplit Authors

#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace mtlsplit {

std::uint64_t splitmix64(std::uint64_t& state);

/// 64-bit FNV-1a over the bytes of `text`.
std::uint64_t fnv1a64(std::string_view text);

/// Sub-seed for one purpose: splitmix64 of (seed XOR fnv1a64(tag)).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag);

/// xoshiro256** seeded through splitmix64. Streams are identical on every
/// platform: all derived draws use integer arithmetic plus exact scaling.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi);

  /// Uniform integer in [0, bound) without modulo bias. bound must be > 0.
  std::uint64_t below(std::uint64_t bound);

  bool coin() { return (next_u64() >> 63) != 0; }

 private:
  std::array<std::uint64_t, 4> s_{};
};

}  // namespace mtlsplit
