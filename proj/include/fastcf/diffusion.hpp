// Copyright 2026 The fastcf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>

#include "fastcf/models.hpp"
#include "fastcf/schedule.hpp"
#include "fastcf/tensor.hpp"

namespace fastcf {

class Rng;

/// x_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps.
Tensor forward_sample(const NoiseSchedule& s, const Tensor& x0, int t, const Tensor& eps);

/// One-shot clean estimate (x_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t).
Tensor denoised_estimate(const NoiseSchedule& s, const Tensor& x_t, const Tensor& eps_hat, int t);

/// Mean of q(x_{t-1} | x_t, x_0 = x0_hat). Equals the epsilon-form reverse
/// mean when x0_hat is the denoised estimate of the same eps_hat.
Tensor posterior_mean(const NoiseSchedule& s, const Tensor& x_t, const Tensor& x0_hat, int t);

struct PosteriorStep {
  Tensor sample;    // x_{t-1}
  Tensor mean;      // mu (already shifted when guidance was given)
  double variance;  // beta~_t
};

/// Reverse step mu = (x_t - beta_t / sqrt(1 - abar_t) eps_hat) / sqrt(alpha_t),
/// x_{t-1} ~ N(mu - beta~_t g, beta~_t I). No noise is added at t = 1.
PosteriorStep posterior_step(const NoiseSchedule& s, const NoisePredictor& model, const Tensor& x_t,
                             int t, Rng& rng, const Tensor* guidance = nullptr);

/// Runs posterior_step from `from_t` (default T, starting at N(0, I)) down to 1.
Tensor unconditional_sample(const NoiseSchedule& s, const NoisePredictor& model, const Shape& shape,
                            Rng& rng, std::optional<int> from_t = {},
                            std::optional<Tensor> from_x = {});

}  // namespace fastcf
