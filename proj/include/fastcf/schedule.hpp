// Copyright 2026 The fastcf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

namespace fastcf {

/// Variance schedule of a T-step diffusion. Timesteps are 1-based: t = 1..T,
/// with alpha_bar(0) = 1 by convention.
class NoiseSchedule {
 public:
  /// Builds a schedule from per-step betas; `parent_indices` records the
  /// original timesteps when this schedule is a respacing of another.
  explicit NoiseSchedule(std::vector<double> betas, std::vector<int> parent_indices = {});

  /// Schedule whose cumulative products are exactly `alpha_bars` (used for
  /// respacing, so respaced values are a bit-exact subsequence).
  static NoiseSchedule from_alpha_bars(std::vector<double> alpha_bars,
                                       std::vector<int> parent_indices);

  int steps() const { return static_cast<int>(betas_.size()); }
  double beta(int t) const;
  double alpha(int t) const { return 1.0 - beta(t); }
  double alpha_bar(int t) const;
  /// beta~_t = beta_t (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t); zero at t = 1.
  double posterior_variance(int t) const;

  const std::vector<double>& betas() const { return betas_; }
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }  // index t-1
  /// Original timestep selected for each respaced step (empty if not respaced).
  const std::vector<int>& parent_indices() const { return parent_indices_; }
  bool respaced() const { return !parent_indices_.empty(); }

 private:
  NoiseSchedule() = default;
  void finish();
  void check(int t, bool allow_zero) const;

  std::vector<double> betas_;
  std::vector<double> alpha_bars_;
  std::vector<double> posterior_variances_;
  std::vector<int> parent_indices_;
};

/// Linear betas from 1e-4 to 0.02, both scaled by 1000/T.
NoiseSchedule make_linear_schedule(int steps);

/// n evenly spaced original timesteps (always including the last):
/// sel_k = floor(k T / n). New betas follow from the selected alpha_bars.
NoiseSchedule respace(const NoiseSchedule& schedule, int steps);

}  // namespace fastcf
