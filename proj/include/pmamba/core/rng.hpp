// Copyright 2026 The PyramidMamba-Desk Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace pmamba {

/// Counter-based splittable generator.
///
/// Every draw is a pure function of (seed, stream, counter): the 64-bit output
/// is the SplitMix64 finalizer applied to a key derived from seed and stream
/// plus the counter times the golden gamma. Streams obtained with `split` never
/// share state with their parent, so consuming values from one stream (for
/// example, data loading) cannot shift another (weight init).
///
/// Conversions to floating point only use exact integer arithmetic and IEEE
/// multiplication, so uniform draws are identical on every platform. Normal
/// draws go through `std::log`/`std::cos` and inherit the libm's accuracy.
class Rng {
 public:
  constexpr Rng() = default;
  constexpr Rng(std::uint64_t seed, std::uint64_t stream = 0)
      : seed_(seed), stream_(stream), key_(mix(mix(seed) ^ (stream * kStreamGamma + 0x632be59bd9b4e019ULL))) {}

  constexpr std::uint64_t seed() const { return seed_; }
  constexpr std::uint64_t stream() const { return stream_; }
  constexpr std::uint64_t counter() const { return counter_; }
  constexpr void set_counter(std::uint64_t c) { counter_ = c; }

  /// Derives an independent child stream. Does not advance this generator.
  constexpr Rng split(std::uint64_t child) const {
    return Rng(seed_, mix(key_ + mix(child + 0x2545f4914f6cdd1dULL)));
  }
  Rng split(std::string_view name) const { return split(hash(name)); }

  constexpr std::uint64_t next_u64() { return mix(key_ + (++counter_) * kGolden); }

  /// Uniform in [0, 1) with 53 random bits.
  constexpr double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  constexpr double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Uses rejection to stay unbiased.
  constexpr std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller (one draw per call, no cached spare so
  /// the value is a function of the counter alone).
  double normal() {
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 < 0x1.0p-60) u1 = 0x1.0p-60;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// FNV-1a, used to key streams by parameter name.
  static constexpr std::uint64_t hash(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    return h;
  }

 private:
  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;
  static constexpr std::uint64_t kStreamGamma = 0xd1b54a32d192ed03ULL;

  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_ = 0;
  std::uint64_t stream_ = 0;
  std::uint64_t key_ = mix(mix(0) ^ 0x632be59bd9b4e019ULL);
  std::uint64_t counter_ = 0;
};

}  // namespace pmamba
