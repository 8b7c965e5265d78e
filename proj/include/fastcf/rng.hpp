// Copyright 2026 The fastcf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>

namespace fastcf {

/// Seeded random stream. Never ambient: every stochastic routine takes one
/// explicitly, and independent consumers derive their own via fork().
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  double normal();
  double uniform();  // [0, 1)
  std::uint64_t next_u64();
  /// Uniform integer in [lo, hi].
  int uniform_int(int lo, int hi);

  /// Independent substream keyed by `stream`; does not advance this stream.
  Rng fork(std::uint64_t stream) const;

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// SplitMix64 finalizer, used to derive substream seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace fastcf
