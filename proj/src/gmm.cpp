// Copyright 2026 The fastcf Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "fastcf/errors.hpp"
#include "fastcf/models.hpp"
#include "fastcf/ops.hpp"
#include "fastcf/rng.hpp"

namespace fastcf {

void GmmPrior::validate() const {
  if (weights.empty()) throw ParameterError("mixture has no components");
  if (means.size() != weights.size() || variances.size() != weights.size()) {
    throw ParameterError("mixture weights, means and variances differ in length");
  }
  double total = 0;
  for (double w : weights) {
    if (!(w >= 0)) throw ParameterError("mixture weight is negative");
    total += w;
  }
  if (std::fabs(total - 1.0) > 1e-9) throw ParameterError("mixture weights do not sum to 1");
  for (double v : variances) {
    if (!(v > 0)) throw ParameterError("mixture variance must be positive");
  }
  for (const auto& m : means) {
    if (m.size() != dim() || m.empty()) throw ParameterError("mixture means differ in dimension");
  }
}

std::vector<double> GmmPrior::sample(Rng& rng, std::optional<std::size_t> component) const {
  std::size_t k = 0;
  if (component) {
    if (*component >= components()) throw IndexError("mixture component out of range");
    k = *component;
  } else {
    double u = rng.uniform(), acc = 0;
    for (k = 0; k + 1 < components(); ++k) {
      acc += weights[k];
      if (u < acc) break;
    }
  }
  const double sd = std::sqrt(variances[k]);
  std::vector<double> x(dim());
  for (std::size_t j = 0; j < x.size(); ++j) x[j] = means[k][j] + sd * rng.normal();
  return x;
}

GmmPosteriorDenoiser::GmmPosteriorDenoiser(GmmPrior prior, NoiseSchedule schedule)
    : prior_(std::move(prior)), schedule_(std::move(schedule)) {
  prior_.validate();
}

PosteriorMean GmmPosteriorDenoiser::posterior_mean(std::span<const float> x_t, int t) const {
  const std::size_t d = prior_.dim(), K = prior_.components();
  if (x_t.size() != d) {
    throw ShapeError("mixture denoiser expects " + std::to_string(d) + " values, got " +
                     std::to_string(x_t.size()));
  }
  const double a = schedule_.alpha_bar(t);
  const double sa = std::sqrt(a);
  std::vector<double> ll(K);
  for (std::size_t i = 0; i < K; ++i) {
    const double v = a * prior_.variances[i] + 1.0 - a;
    double sq = 0;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = x_t[j] - sa * prior_.means[i][j];
      sq += diff * diff;
    }
    ll[i] = std::log(prior_.weights[i]) - 0.5 * d * std::log(2 * std::numbers::pi * v) -
            0.5 * sq / v;
  }
  PosteriorMean out;
  out.responsibilities.assign(K, 0.0);
  double total = 0;
  for (std::size_t i = 0; i < K; ++i) total += (out.responsibilities[i] = std::exp(ll[i]));
  if (!(total > 0) || !std::isfinite(total)) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < K; ++i) {
      if (ll[i] > ll[best]) best = i;
    }
    out.responsibilities.assign(K, 0.0);
    out.responsibilities[best] = 1.0;
    out.fallback = true;
  } else {
    // Max-shifted normalization; same result, better conditioned.
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : ll) mx = std::max(mx, v);
    total = 0;
    for (std::size_t i = 0; i < K; ++i) total += (out.responsibilities[i] = std::exp(ll[i] - mx));
    for (double& r : out.responsibilities) r /= total;
  }
  out.mean.assign(d, 0.0);
  for (std::size_t i = 0; i < K; ++i) {
    const double r = out.responsibilities[i];
    if (r == 0.0) continue;
    const double v = a * prior_.variances[i] + 1.0 - a;
    const double c = sa * prior_.variances[i] / v;
    for (std::size_t j = 0; j < d; ++j) {
      out.mean[j] += r * (prior_.means[i][j] + c * (x_t[j] - sa * prior_.means[i][j]));
    }
  }
  return out;
}

Tensor GmmPosteriorDenoiser::predict_noise(const Tensor& x_t, int t) const {
  if (t < 1 || t > schedule_.steps()) {
    throw IndexError("timestep " + std::to_string(t) + " outside [1, " +
                     std::to_string(schedule_.steps()) + "]");
  }
  const PosteriorMean pm = posterior_mean(x_t.data(), t);
  const double a = schedule_.alpha_bar(t);
  const double sa = std::sqrt(a), s1 = std::sqrt(1.0 - a);
  auto xv = x_t.data();
  std::vector<float> eps(xv.size());
  for (std::size_t j = 0; j < xv.size(); ++j) {
    eps[j] = static_cast<float>((xv[j] - sa * pm.mean[j]) / s1);
  }
  Tensor value(x_t.shape(), std::move(eps));
  if (!x_t.requires_grad()) return value;

  // Analytic VJP of eps_hat(x) = (x - sqrt(a) m(x)) / sqrt(1 - a), where the
  // posterior-mean Jacobian is C I + sum_i r_i m_i (g_i - gbar)^T.
  const std::size_t d = prior_.dim(), K = prior_.components();
  std::vector<double> x(xv.begin(), xv.end());
  std::vector<std::vector<double>> means(K, std::vector<double>(d)), scores(K, std::vector<double>(d));
  std::vector<double> gbar(d, 0.0);
  double C = 0;
  for (std::size_t i = 0; i < K; ++i) {
    const double v = a * prior_.variances[i] + 1.0 - a;
    const double c = sa * prior_.variances[i] / v;
    C += pm.responsibilities[i] * c;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = x[j] - sa * prior_.means[i][j];
      means[i][j] = prior_.means[i][j] + c * diff;
      scores[i][j] = -diff / v;
      gbar[j] += pm.responsibilities[i] * scores[i][j];
    }
  }
  const bool soft = !pm.fallback;
  auto vjp = [=, r = pm.responsibilities](std::span<const double> u) {
    std::vector<double> jt(d);
    for (std::size_t j = 0; j < d; ++j) jt[j] = C * u[j];
    if (soft) {
      for (std::size_t i = 0; i < K; ++i) {
        double mu = 0;
        for (std::size_t j = 0; j < d; ++j) mu += means[i][j] * u[j];
        for (std::size_t j = 0; j < d; ++j) jt[j] += r[i] * mu * (scores[i][j] - gbar[j]);
      }
    }
    std::vector<double> out(d);
    for (std::size_t j = 0; j < d; ++j) out[j] = (u[j] - sa * jt[j]) / s1;
    return out;
  };
  return custom_unary("gmm_denoiser", x_t, std::move(value), std::move(vjp));
}

}  // namespace fastcf
