// Copyright 2026 The Geneses Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace geneses {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Counter-based generator: the n-th draw is a pure function of (key, n).
///
/// Streams are split by hashing a stream id into the key, so every consumer
/// (dataset sample, training step, dropout site) gets an independent sequence
/// that does not depend on how many numbers other consumers pulled.
class Rng {
 public:
  constexpr Rng() = default;
  constexpr explicit Rng(std::uint64_t seed) noexcept : key_(splitmix64(seed)) {}
  constexpr Rng(std::uint64_t key, std::uint64_t counter) noexcept
      : key_(key), counter_(counter) {}

  /// Child stream; does not advance this generator.
  constexpr Rng split(std::uint64_t stream) const noexcept {
    return Rng(splitmix64(key_ ^ splitmix64(stream + 0x632be59bd9b4e019ULL)), 0);
  }

  static constexpr std::uint64_t bits_at(std::uint64_t key, std::uint64_t n) noexcept {
    return splitmix64(key ^ splitmix64(n));
  }

  /// Uniform in the open interval (0, 1).
  static constexpr double uniform_at(std::uint64_t key, std::uint64_t n) noexcept {
    return (static_cast<double>(bits_at(key, n) >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Box-Muller on counters (2n, 2n+1), cosine branch only.
  static double normal_at(std::uint64_t key, std::uint64_t n) noexcept {
    const double u1 = uniform_at(key, 2 * n);
    const double u2 = uniform_at(key, 2 * n + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t next_bits() noexcept { return bits_at(key_, counter_++); }
  double uniform() noexcept { return uniform_at(key_, counter_++); }
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  double normal() noexcept { return normal_at(key_, counter_++); }
  bool bernoulli(double p) noexcept { return uniform() < p; }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept {
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
  }

  constexpr std::uint64_t key() const noexcept { return key_; }
  constexpr std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_ = splitmix64(0);
  std::uint64_t counter_ = 0;
};

}  // namespace geneses
