// Copyright (c) 2026 WeightAlign contributors
// Licensed under the Apache License, Version 2.0.

/**
 * @file rng.hpp
 * @brief Counter-based deterministic random numbers.
 *
 * Every draw is a pure function of (seed, stream, counter), so independent
 * streams can be split off for layers, epochs or Monte-Carlo shards and the
 * result never depends on evaluation order.
 */

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace wa {

namespace detail {
inline uint64_t splitmix64(uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
}  // namespace detail

class Rng {
 public:
  Rng() = default;
  Rng(uint64_t seed, uint64_t stream = 0)
      : key_(detail::splitmix64(detail::splitmix64(seed) ^
                                detail::splitmix64(~stream))) {}

  /// Independent stream derived from this one; does not advance the parent.
  Rng split(uint64_t stream) const {
    Rng r;
    r.key_ = detail::splitmix64(key_ ^ detail::splitmix64(stream + 0x632be59bd9b4e019ULL));
    return r;
  }

  uint64_t next_u64() { return detail::splitmix64(key_ + 0x9e3779b97f4a7c15ULL * ++counter_); }

  /// Uniform in [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  uint64_t below(uint64_t n) { return next_u64() % n; }

  /// Standard normal via Box-Muller (two uniforms per draw, no caching).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    // Guard against log(0).
    u1 = u1 > 0 ? u1 : 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Exponential with the given rate.
  double exponential(double rate) {
    double u = uniform();
    u = u < 1.0 ? u : 1.0 - 0x1.0p-53;
    return -std::log1p(-u) / rate;
  }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  uint64_t key_ = 0;
  uint64_t counter_ = 0;
};

}  // namespace wa
