// Copyright 2026 The fastcf Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "fastcf/diffusion.hpp"
#include "fastcf/errors.hpp"
#include "fastcf/models.hpp"
#include "fastcf/ops.hpp"
#include "fastcf/rng.hpp"
#include "fastcf/schedule.hpp"
#include "fastcf/toy2d.hpp"
#include "support.hpp"

namespace fastcf {
namespace {

using testing::to_double;

// epsilon-hat == 0 everywhere.
class ZeroNoise final : public NoisePredictor {
 public:
  explicit ZeroNoise(int steps) : steps_(steps) {}
  Tensor predict_noise(const Tensor& x_t, int) const override { return Tensor::zeros(x_t.shape()); }
  int num_timesteps() const override { return steps_; }

 private:
  int steps_;
};

TEST(Schedule, LinearEndpointsAndProducts) {
  const NoiseSchedule s = make_linear_schedule(1000);
  EXPECT_DOUBLE_EQ(s.beta(1), 1e-4);
  EXPECT_DOUBLE_EQ(s.beta(1000), 0.02);
  double prod = 1.0;
  for (int t = 1; t <= 1000; ++t) {
    EXPECT_GT(s.beta(t), 0.0);
    EXPECT_LT(s.beta(t), 1.0);
    prod *= 1.0 - s.beta(t);
    EXPECT_NEAR(s.alpha_bar(t), prod, 1e-9);
    if (t > 1) {
      EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
    }
  }
  EXPECT_EQ(s.alpha_bar(0), 1.0);
  EXPECT_EQ(s.posterior_variance(1), 0.0);
  EXPECT_THROW(s.beta(0), IndexError);
  EXPECT_THROW(s.alpha_bar(1001), IndexError);
  EXPECT_THROW(make_linear_schedule(0), ParameterError);
  // Scaled end beta exceeds 1 when T is too short.
  EXPECT_THROW(make_linear_schedule(10), ParameterError);
}

TEST(Schedule, ScaledEndpoints) {
  const NoiseSchedule s = make_linear_schedule(100);
  EXPECT_NEAR(s.beta(1), 1e-3, 1e-15);
  EXPECT_NEAR(s.beta(100), 0.2, 1e-15);
}

TEST(Schedule, RespaceIsExactSubsequence) {
  for (int parent_steps : {50, 100, 1000}) {
    const NoiseSchedule parent = make_linear_schedule(parent_steps);
    for (int n : {2, 7, 25, parent_steps / 2, parent_steps}) {
      const NoiseSchedule r = respace(parent, n);
      ASSERT_EQ(r.steps(), n);
      ASSERT_EQ(r.parent_indices().size(), static_cast<std::size_t>(n));
      EXPECT_EQ(r.parent_indices().back(), parent_steps);
      for (int k = 1; k <= n; ++k) {
        const double v = r.alpha_bar(k);
        EXPECT_EQ(v, parent.alpha_bar(r.parent_indices()[k - 1]));
        EXPECT_NE(std::find(parent.alpha_bars().begin(), parent.alpha_bars().end(), v),
                  parent.alpha_bars().end());
        EXPECT_GT(r.beta(k), 0.0);
        EXPECT_LT(r.beta(k), 1.0);
      }
    }
  }
}

TEST(Schedule, RespaceIdentityAndMedicalIndex) {
  const NoiseSchedule parent = make_linear_schedule(1000);
  const NoiseSchedule same = respace(parent, 1000);
  EXPECT_EQ(same.alpha_bars(), parent.alpha_bars());
  const NoiseSchedule r = respace(parent, 400);
  // Step 160 of 400 sits at original timestep 400 of 1000.
  EXPECT_EQ(r.parent_indices()[159], 400);
  EXPECT_EQ(r.alpha_bar(160), parent.alpha_bar(400));
  EXPECT_THROW(respace(parent, 1001), ParameterError);
  EXPECT_THROW(respace(parent, 0), ParameterError);
}

TEST(ForwardProcess, Basics) {
  const NoiseSchedule s = make_linear_schedule(1000);
  Rng rng(1);
  const Tensor x0 = Tensor::randn({1, 4, 4}, rng);
  const Tensor zero = Tensor::zeros(x0.shape());
  for (int t : {1, 500, 1000}) {
    const Tensor xt = forward_sample(s, x0, t, zero);
    for (std::size_t i = 0; i < x0.numel(); ++i) {
      EXPECT_FLOAT_EQ(xt.at(i), static_cast<float>(std::sqrt(s.alpha_bar(t)) * x0.at(i)));
    }
  }
  const Tensor eps = Tensor::randn(x0.shape(), rng);
  const Tensor end = forward_sample(s, x0, 1000, eps);
  for (std::size_t i = 0; i < x0.numel(); ++i) EXPECT_LT(std::abs(end.at(i) - eps.at(i)), 0.05);
  EXPECT_THROW(forward_sample(s, x0, 1, Tensor::zeros({3})), ShapeError);
}

TEST(ForwardProcess, MonteCarloMoments) {
  const NoiseSchedule s = make_linear_schedule(100);
  Rng rng(2);
  const Tensor x0({1}, {0.8f});
  for (int t : {5, 40, 90}) {
    const int n = 10000;
    double m = 0, m2 = 0;
    for (int i = 0; i < n; ++i) {
      const double v = forward_sample(s, x0, t, Tensor::randn({1}, rng)).at(0);
      m += v;
      m2 += v * v;
    }
    m /= n;
    const double var = m2 / n - m * m;
    const double want_m = std::sqrt(s.alpha_bar(t)) * 0.8, want_v = 1 - s.alpha_bar(t);
    EXPECT_NEAR(m, want_m, 3 * std::sqrt(want_v / n));
    // Standard error of a Gaussian sample variance is v sqrt(2 / (n - 1)).
    EXPECT_NEAR(var, want_v, 3 * want_v * std::sqrt(2.0 / (n - 1)));
  }
}

TEST(ForwardProcess, RoundTripProperty) {
  Rng rng(3);
  for (int steps : {50, 100, 1000}) {
    const NoiseSchedule s = make_linear_schedule(steps);
    for (int i = 0; i < 300; ++i) {
      const int t = rng.uniform_int(1, steps);
      const Tensor x0 = Tensor::randn({6}, rng);
      const Tensor eps = Tensor::randn({6}, rng);
      const Tensor back = denoised_estimate(s, forward_sample(s, x0, t, eps), eps, t);
      for (std::size_t j = 0; j < 6; ++j) {
        // Within 1e-5 of x0, relative to the magnitude float32 can hold at
        // this noise level.
        const double tol = 1e-5 * std::max(1.0, std::sqrt((1 - s.alpha_bar(t)) / s.alpha_bar(t)));
        EXPECT_NEAR(back.at(j), x0.at(j), tol) << "T " << steps << " t " << t;
      }
    }
  }
}

TEST(DenoisedEstimate, ZeroNoiseAndAnalyticDenoiser) {
  const NoiseSchedule s = make_linear_schedule(100);
  Rng rng(4);
  const Tensor xt = Tensor::randn({2}, rng);
  const Tensor est = denoised_estimate(s, xt, Tensor::zeros({2}), 30);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_FLOAT_EQ(est.at(i), static_cast<float>(xt.at(i) / std::sqrt(s.alpha_bar(30))));
  }
  const GmmPosteriorDenoiser den(default_toy_prior(), s);
  for (int t : {1, 10, 50, 99}) {
    const Tensor x = Tensor::randn({2}, rng);
    const Tensor xbar = denoised_estimate(s, x, den.predict_noise(x, t), t);
    const auto closed = den.posterior_mean(x.data(), t).mean;
    for (std::size_t i = 0; i < 2; ++i) {
      EXPECT_NEAR(xbar.at(i), closed[i], 1e-6 * std::max(1.0, std::abs(closed[i]))) << "t " << t;
    }
  }
}

TEST(PosteriorStep, FinalStepAndZeroModel) {
  const NoiseSchedule s = make_linear_schedule(100);
  const ZeroNoise zero(100);
  Rng rng(5);
  const Tensor x = Tensor::randn({3}, rng);
  const PosteriorStep last = posterior_step(s, zero, x, 1, rng);
  EXPECT_EQ(to_double(last.sample.data()), to_double(last.mean.data()));
  EXPECT_EQ(last.variance, 0.0);
  const PosteriorStep mid = posterior_step(s, zero, x, 40, rng);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(mid.mean.at(i), x.at(i) / std::sqrt(s.alpha(40)), 1e-6);
  }
  EXPECT_DOUBLE_EQ(mid.variance, s.posterior_variance(40));
}

TEST(PosteriorStep, ZeroGuidanceMatchesUnguided) {
  const NoiseSchedule s = make_linear_schedule(100);
  const GmmPosteriorDenoiser den(default_toy_prior(), s);
  Rng draw(6);
  const Tensor x = Tensor::randn({2}, draw);
  const Tensor g = Tensor::zeros({2});
  Rng a(7), b(7);
  const PosteriorStep plain = posterior_step(s, den, x, 20, a);
  const PosteriorStep guided = posterior_step(s, den, x, 20, b, &g);
  EXPECT_EQ(to_double(plain.mean.data()), to_double(guided.mean.data()));
  EXPECT_EQ(to_double(plain.sample.data()), to_double(guided.sample.data()));
  EXPECT_EQ(plain.variance, guided.variance);
}

TEST(PosteriorStep, GuidanceShiftsMeanByVarianceTimesGradient) {
  const NoiseSchedule s = make_linear_schedule(100);
  const GmmPosteriorDenoiser den(default_toy_prior(), s);
  Rng draw(8);
  const Tensor x = Tensor::randn({2}, draw);
  const Tensor g({2}, {1.5f, -0.5f});
  Rng a(9), b(9);
  const PosteriorStep plain = posterior_step(s, den, x, 20, a);
  const PosteriorStep guided = posterior_step(s, den, x, 20, b, &g);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_NEAR(guided.mean.at(i), plain.mean.at(i) - s.posterior_variance(20) * g.at(i), 1e-6);
  }
}

TEST(PosteriorStep, EpsilonAndPosteriorMeanFormsAgree) {
  const NoiseSchedule s = make_linear_schedule(100);
  const GmmPosteriorDenoiser den(default_toy_prior(), s);
  Rng rng(10);
  for (int t : {2, 30, 100}) {
    const Tensor x = Tensor::randn({2}, rng);
    const Tensor eps = den.predict_noise(x, t);
    const Tensor via_x0 = posterior_mean(s, x, denoised_estimate(s, x, eps, t), t);
    const PosteriorStep step = posterior_step(s, den, x, t, rng);
    for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(step.mean.at(i), via_x0.at(i), 1e-5);
  }
}

TEST(Sampling, UnconditionalHistogramMatchesWeights) {
  GmmPrior prior = default_toy_prior();
  prior.weights = {0.3, 0.7};
  const NoiseSchedule s = make_linear_schedule(100);
  const GmmPosteriorDenoiser den(prior, s);
  const Rng root(11);
  int in_a = 0;
  const int runs = 2000;
  for (int i = 0; i < runs; ++i) {
    Rng rng = root.fork(static_cast<std::uint64_t>(i));
    in_a += unconditional_sample(s, den, {2}, rng).at(0) < 0;
  }
  EXPECT_NEAR(static_cast<double>(in_a) / runs, 0.3, 0.05);
}

TEST(Sampling, EmptyChainReconstructionAndDeterminism) {
  const NoiseSchedule s = make_linear_schedule(100);
  const GmmPosteriorDenoiser den(default_toy_prior(), s);
  const Tensor start({2}, {1.0f, 2.0f});
  Rng rng(12);
  EXPECT_EQ(to_double(unconditional_sample(s, den, {2}, rng, 0, start).data()),
            to_double(start.data()));

  // Full-length schedule: at t = 5 of 1000 the residual posterior spread is
  // far below the 0.1 budget.
  const NoiseSchedule fine = make_linear_schedule(1000);
  const GmmPosteriorDenoiser fine_den(default_toy_prior(), fine);
  const GmmPrior prior = default_toy_prior();
  double l1 = 0;
  const int runs = 200;
  for (int i = 0; i < runs; ++i) {
    const auto v = prior.sample(rng);
    const Tensor x0({2}, {static_cast<float>(v[0]), static_cast<float>(v[1])});
    const Tensor xt = forward_sample(fine, x0, 5, Tensor::randn({2}, rng));
    const Tensor back = unconditional_sample(fine, fine_den, {2}, rng, 5, xt);
    l1 += (std::abs(back.at(0) - x0.at(0)) + std::abs(back.at(1) - x0.at(1))) / 2;
  }
  EXPECT_LT(l1 / runs, 0.1);

  Rng a(13), b(13);
  EXPECT_EQ(to_double(unconditional_sample(s, den, {2}, a).data()),
            to_double(unconditional_sample(s, den, {2}, b).data()));
}

}  // namespace
}  // namespace fastcf
