// Copyright 2026 The fastcf Authors
// SPDX-License-Identifier: Apache-2.0

#include "fastcf/diffusion.hpp"

#include <cmath>
#include <string>

#include "fastcf/errors.hpp"
#include "fastcf/ops.hpp"
#include "fastcf/rng.hpp"

namespace fastcf {

NoiseSchedule::NoiseSchedule(std::vector<double> betas, std::vector<int> parent_indices)
    : betas_(std::move(betas)), parent_indices_(std::move(parent_indices)) {
  alpha_bars_.resize(betas_.size());
  double prod = 1.0;
  for (std::size_t i = 0; i < betas_.size(); ++i) alpha_bars_[i] = prod *= 1.0 - betas_[i];
  finish();
}

NoiseSchedule NoiseSchedule::from_alpha_bars(std::vector<double> alpha_bars,
                                             std::vector<int> parent_indices) {
  NoiseSchedule s;
  s.alpha_bars_ = std::move(alpha_bars);
  s.parent_indices_ = std::move(parent_indices);
  s.betas_.resize(s.alpha_bars_.size());
  double prev = 1.0;
  for (std::size_t i = 0; i < s.alpha_bars_.size(); ++i) {
    s.betas_[i] = 1.0 - s.alpha_bars_[i] / prev;
    prev = s.alpha_bars_[i];
  }
  s.finish();
  return s;
}

void NoiseSchedule::finish() {
  if (betas_.size() < 2) throw ParameterError("schedule needs at least 2 steps");
  if (!parent_indices_.empty() && parent_indices_.size() != betas_.size()) {
    throw ParameterError("respacing map length differs from step count");
  }
  posterior_variances_.resize(betas_.size());
  double prev = 1.0;
  for (std::size_t i = 0; i < betas_.size(); ++i) {
    const double b = betas_[i];
    if (!(b > 0.0 && b < 1.0)) {
      throw ParameterError("beta_" + std::to_string(i + 1) + " = " + std::to_string(b) +
                           " outside (0, 1)");
    }
    posterior_variances_[i] = b * (1.0 - prev) / (1.0 - alpha_bars_[i]);
    prev = alpha_bars_[i];
  }
}

void NoiseSchedule::check(int t, bool allow_zero) const {
  if (t < (allow_zero ? 0 : 1) || t > steps()) {
    throw IndexError("timestep " + std::to_string(t) + " outside [" + (allow_zero ? "0" : "1") +
                     ", " + std::to_string(steps()) + "]");
  }
}

double NoiseSchedule::beta(int t) const {
  check(t, false);
  return betas_[t - 1];
}

double NoiseSchedule::alpha_bar(int t) const {
  check(t, true);
  return t == 0 ? 1.0 : alpha_bars_[t - 1];
}

double NoiseSchedule::posterior_variance(int t) const {
  check(t, false);
  return posterior_variances_[t - 1];
}

NoiseSchedule make_linear_schedule(int steps) {
  if (steps < 2) throw ParameterError("linear schedule needs T >= 2, got " + std::to_string(steps));
  const double scale = 1000.0 / steps;
  const double lo = 1e-4 * scale, hi = 0.02 * scale;
  std::vector<double> betas(steps);
  for (int i = 0; i < steps; ++i) betas[i] = lo + (hi - lo) * i / (steps - 1);
  return NoiseSchedule(std::move(betas));
}

NoiseSchedule respace(const NoiseSchedule& schedule, int steps) {
  const int T = schedule.steps();
  if (steps < 2 || steps > T) {
    throw ParameterError("respace target " + std::to_string(steps) + " outside [2, " +
                         std::to_string(T) + "]");
  }
  std::vector<int> selected(steps);
  std::vector<double> bars(steps);
  for (int k = 1; k <= steps; ++k) {
    const int original = static_cast<int>(static_cast<long long>(k) * T / steps);
    selected[k - 1] = schedule.respaced() ? schedule.parent_indices()[original - 1] : original;
    bars[k - 1] = schedule.alpha_bar(original);
  }
  return NoiseSchedule::from_alpha_bars(std::move(bars), std::move(selected));
}

Tensor forward_sample(const NoiseSchedule& s, const Tensor& x0, int t, const Tensor& eps) {
  if (x0.shape() != eps.shape()) {
    throw ShapeError("forward_sample: x_0 " + shape_string(x0.shape()) + " vs eps " +
                     shape_string(eps.shape()));
  }
  const double ab = s.alpha_bar(t);
  return x0 * static_cast<float>(std::sqrt(ab)) + eps * static_cast<float>(std::sqrt(1.0 - ab));
}

Tensor denoised_estimate(const NoiseSchedule& s, const Tensor& x_t, const Tensor& eps_hat, int t) {
  if (x_t.shape() != eps_hat.shape()) {
    throw ShapeError("denoised_estimate: x_t " + shape_string(x_t.shape()) + " vs eps " +
                     shape_string(eps_hat.shape()));
  }
  const double ab = s.alpha_bar(t);
  if (ab <= 0.0) throw SingularityError("alpha_bar_" + std::to_string(t) + " is zero");
  const double inv = 1.0 / std::sqrt(ab);
  return x_t * static_cast<float>(inv) - eps_hat * static_cast<float>(std::sqrt(1.0 - ab) * inv);
}

Tensor posterior_mean(const NoiseSchedule& s, const Tensor& x_t, const Tensor& x0_hat, int t) {
  const double ab = s.alpha_bar(t), ab_prev = s.alpha_bar(t - 1), b = s.beta(t);
  const double c0 = std::sqrt(ab_prev) * b / (1.0 - ab);
  const double ct = std::sqrt(1.0 - b) * (1.0 - ab_prev) / (1.0 - ab);
  if (ct == 0.0) return x0_hat * static_cast<float>(c0);
  return x0_hat * static_cast<float>(c0) + x_t * static_cast<float>(ct);
}

PosteriorStep posterior_step(const NoiseSchedule& s, const NoisePredictor& model, const Tensor& x_t,
                             int t, Rng& rng, const Tensor* guidance) {
  const double ab = s.alpha_bar(t), b = s.beta(t);
  const Tensor eps = model.predict_noise(x_t, t);
  Tensor mu = (x_t - eps * static_cast<float>(b / std::sqrt(1.0 - ab))) *
              static_cast<float>(1.0 / std::sqrt(1.0 - b));
  const double var = s.posterior_variance(t);
  if (guidance != nullptr) mu = mu - *guidance * static_cast<float>(var);
  if (t == 1) return {mu, mu, var};
  Tensor z = Tensor::randn(x_t.shape(), rng);
  return {mu + z * static_cast<float>(std::sqrt(var)), mu, var};
}

Tensor unconditional_sample(const NoiseSchedule& s, const NoisePredictor& model, const Shape& shape,
                            Rng& rng, std::optional<int> from_t, std::optional<Tensor> from_x) {
  if (from_t && !from_x) throw ParameterError("from_t given without from_x");
  const int start = from_t.value_or(s.steps());
  if (start < 0 || start > s.steps()) {
    throw IndexError("from_t " + std::to_string(start) + " outside schedule");
  }
  Tensor x = from_x ? *from_x : Tensor::randn(shape, rng);
  for (int t = start; t >= 1; --t) x = posterior_step(s, model, x, t, rng).sample;
  return x;
}

}  // namespace fastcf
