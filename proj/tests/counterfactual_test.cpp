// Copyright 2026 The fastcf Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "fastcf/counterfactual.hpp"
#include "fastcf/diffusion.hpp"
#include "fastcf/errors.hpp"
#include "fastcf/mask.hpp"
#include "fastcf/models.hpp"
#include "fastcf/ops.hpp"
#include "fastcf/rng.hpp"
#include "fastcf/toy2d.hpp"
#include "support.hpp"

namespace fastcf {
namespace {

using testing::finite_difference;
using testing::relative_error;
using testing::to_double;

constexpr std::size_t kA = 0;  // toy target class

// Losses are evaluated in float32; a wider step keeps rounding noise in the
// differences well below the 1e-3 budget.
constexpr double kStep = 1e-2;

class ZeroNoise final : public NoisePredictor {
 public:
  explicit ZeroNoise(int steps) : steps_(steps) {}
  Tensor predict_noise(const Tensor& x_t, int) const override { return Tensor::zeros(x_t.shape()); }
  int num_timesteps() const override { return steps_; }

 private:
  int steps_;
};

// Returns a stored noise tensor regardless of input.
class FixedNoise final : public NoisePredictor {
 public:
  FixedNoise(Tensor eps, int steps) : eps_(std::move(eps)), steps_(steps) {}
  Tensor predict_noise(const Tensor&, int) const override { return eps_; }
  int num_timesteps() const override { return steps_; }

 private:
  Tensor eps_;
  int steps_;
};

struct Toy {
  GmmPrior prior = default_toy_prior();
  NoiseSchedule schedule = make_linear_schedule(100);
  GmmPosteriorDenoiser denoiser{prior, schedule};
  MlpClassifier classifier = bayes_classifier(prior);

  CFConfig config(GradientStrategy strategy) const {
    CFConfig c;
    c.tau = 25;
    c.tau_w = 12;
    c.lambda_c = 3.0;
    c.strategy = strategy;
    c.masking_enabled = false;
    c.dilation = 1;
    return c;
  }

  Tensor sample_b(Rng& rng) const {
    const auto v = prior.sample(rng, 1);
    return Tensor({2}, {static_cast<float>(v[0]), static_cast<float>(v[1])});
  }

  // Fraction of runs whose counterfactual the Bayes classifier puts in A.
  double flip_ratio(const CFConfig& cfg, int runs, std::uint64_t seed) const {
    const Rng root(seed);
    int flipped = 0;
    for (int i = 0; i < runs; ++i) {
      Rng rng = root.fork(static_cast<std::uint64_t>(i));
      const Tensor x = sample_b(rng);
      const CFResult r = generate(x, kA, denoiser, classifier, schedule, cfg, rng);
      flipped += classify(classifier, r.counterfactual)[kA] >= 0.5;
    }
    return static_cast<double>(flipped) / runs;
  }
};

// Small image-shaped problem with random networks.
struct Image {
  Shape shape{1, 6, 6};
  Rng init{77};
  MlpDenoiser denoiser{shape, {16}, 20, init};
  MlpClassifier classifier{shape, {8}, 2, init};
  NoiseSchedule schedule = respace(make_linear_schedule(1000), 20);
};

// ---------------------------------------------------------------- masks

TEST(Mask, IdenticalImagesGiveZeroMask) {
  Rng rng(1);
  const Tensor x = Tensor::randn({3, 5, 5}, rng);
  const MaskState m = extract_mask(x, x, 0.15, 5);
  EXPECT_EQ(m.coverage(), 0.0);
  for (float v : to_double(m.mask.data())) EXPECT_EQ(v, 0.0f);
  EXPECT_EQ(m.mask.shape(), x.shape());
}

TEST(Mask, SinglePixelDilatesToClippedBlock) {
  const int h = 9, w = 11;
  for (int d : {1, 3, 5, 21}) {
    for (auto [py, px] : {std::pair{4, 5}, std::pair{0, 0}, std::pair{8, 10}, std::pair{1, 9}}) {
      Tensor x0 = Tensor::zeros({2, static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
      Tensor xb = x0.detach();
      xb.mutable_data()[static_cast<std::size_t>(py * w + px)] = 0.7f;  // channel 0 only
      const MaskState m = extract_mask(xb, x0, 0.15, d);
      std::vector<float> seed(static_cast<std::size_t>(h * w), 0.0f);
      seed[static_cast<std::size_t>(py * w + px)] = 1.0f;
      const std::vector<float> want = testing::naive_dilate(seed, h, w, d);
      for (std::size_t c = 0; c < 2; ++c) {
        for (std::size_t i = 0; i < want.size(); ++i) {
          ASSERT_EQ(m.mask.at(c * want.size() + i), want[i]) << "d " << d << " i " << i;
        }
      }
      EXPECT_TRUE(m.active);
    }
  }
}

TEST(Mask, DilateMatchesNaiveOnRandomPlanes) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const int h = rng.uniform_int(1, 12), w = rng.uniform_int(1, 12);
    const int width = 2 * rng.uniform_int(0, 4) + 1;
    std::vector<float> plane(static_cast<std::size_t>(h * w));
    for (float& v : plane) v = rng.uniform() < 0.1 ? 1.0f : 0.0f;
    EXPECT_EQ(dilate(plane, static_cast<std::size_t>(h), static_cast<std::size_t>(w), width),
              testing::naive_dilate(plane, h, w, width));
  }
}

TEST(Mask, ThresholdIsOnNormalizedDifference) {
  const Tensor x0 = Tensor::zeros({1, 1, 4});
  // Normalized differences 1, 0.5, 0.145, 0.1.
  const Tensor xb({1, 1, 4}, {-2.0f, 1.0f, 0.29f, 0.2f});
  const MaskState m = extract_mask(xb, x0, 0.15, 1);
  EXPECT_EQ(to_double(m.mask.data()), (std::vector<double>{1, 1, 0, 0}));
  EXPECT_DOUBLE_EQ(m.coverage(), 0.5);
  // Scaling the difference does not change the mask.
  const MaskState scaled = extract_mask(xb * 100.0f, x0, 0.15, 1);
  EXPECT_EQ(to_double(scaled.mask.data()), to_double(m.mask.data()));
}

TEST(Mask, ApplyMaskCases) {
  Rng rng(3);
  const Shape s{2, 4, 4};
  const Tensor xt = Tensor::randn(s, rng), xb = Tensor::randn(s, rng);
  const Tensor fresh = Tensor::randn(s, rng), x0 = Tensor::randn(s, rng);

  const auto [a1, b1] = apply_mask(MaskState{Tensor::ones(s), true}, xt, xb, fresh, x0);
  EXPECT_EQ(to_double(a1.data()), to_double(xt.data()));
  EXPECT_EQ(to_double(b1.data()), to_double(xb.data()));

  const auto [a0, b0] = apply_mask(empty_mask(s), xt, xb, fresh, x0);
  EXPECT_EQ(to_double(a0.data()), to_double(fresh.data()));
  EXPECT_EQ(to_double(b0.data()), to_double(x0.data()));

  for (int trial = 0; trial < 10; ++trial) {
    Tensor m = Tensor::zeros(s);
    for (std::size_t i = 0; i < 16; ++i) {
      const float v = rng.uniform() < 0.5 ? 1.0f : 0.0f;
      m.mutable_data()[i] = v;
      m.mutable_data()[16 + i] = v;
    }
    const auto [am, bm] = apply_mask(MaskState{m, true}, xt, xb, fresh, x0);
    for (std::size_t i = 0; i < m.numel(); ++i) {
      if (m.at(i) == 0.0f) {
        ASSERT_EQ(bm.at(i), x0.at(i));
        ASSERT_EQ(am.at(i), fresh.at(i));
      } else {
        ASSERT_EQ(bm.at(i), xb.at(i));
        ASSERT_EQ(am.at(i), xt.at(i));
      }
    }
  }
  EXPECT_THROW(apply_mask(empty_mask(s), xt, Tensor::zeros({3}), fresh, x0), ShapeError);
}

// ----------------------------------------------------------------- loss

TEST(CfLoss, SaturatedClassifierHasNoGradient) {
  // Logits 200 x_0 - 200 x_1 at x = (1, -1): p(0) = 1 in float.
  const MlpClassifier clf({2}, {Tensor({2, 2}, {100, -100, -100, 100}), Tensor({2}, {0, 0})});
  const Tensor x({2}, {1.0f, -1.0f});
  CFConfig cfg;
  cfg.lambda_c = 1.0;
  const LossGradient g = cf_loss_gradient(x, x, x, 0, clf, cfg);
  for (double v : to_double(g.total.data())) EXPECT_NEAR(v, 0.0, 1e-4);
}

TEST(CfLoss, L1MinimumAtOriginal) {
  Rng rng(4);
  const Toy toy;
  const Tensor x0 = Tensor::randn({2}, rng);
  CFConfig cfg;
  cfg.lambda_c = 0.0;
  cfg.lambda_1 = 5.0;
  cfg.l1_target = L1Target::kDenoised;
  const LossGradient g =
      cf_loss_gradient(x0, x0, Tensor::randn({2}, rng), kA, toy.classifier, cfg);
  for (double v : to_double(g.total.data())) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(g.terms.l1, 0.0);
}

TEST(CfLoss, GradientMatchesFiniteDifferences) {
  Image img;
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    CFConfig cfg;
    cfg.lambda_c = 0.5 + rng.uniform() * 5;
    cfg.lambda_1 = rng.uniform() * 3;
    cfg.l1_target = trial % 2 ? L1Target::kNoisy : L1Target::kDenoised;
    const Tensor x0 = Tensor::randn(img.shape, rng);
    // Keep every coordinate at least 0.05 from x_0 so |.| is smooth.
    Tensor xe = Tensor::randn(img.shape, rng), xn = Tensor::randn(img.shape, rng);
    for (Tensor* t : {&xe, &xn}) {
      for (std::size_t i = 0; i < t->numel(); ++i) {
        const float d = t->at(i) - x0.at(i);
        if (std::abs(d) < 0.05f) t->mutable_data()[i] = x0.at(i) + (d < 0 ? -0.05f : 0.05f);
      }
    }
    const std::size_t target = trial % 2;
    const LossContext ctx{x0, target, img.classifier, cfg};
    const LossGradient g = cf_loss_gradient(xe, x0, xn, target, img.classifier, cfg);
    const auto fd_e = finite_difference(
        [&](const Tensor& v) { return cf_loss(v, xn, ctx).total.item(); }, xe, kStep);
    const auto fd_n = finite_difference(
        [&](const Tensor& v) { return cf_loss(xe, v, ctx).total.item(); }, xn, kStep);
    EXPECT_LT(relative_error(to_double(g.wrt_eval.data()), fd_e), 1e-3) << trial;
    EXPECT_LT(relative_error(to_double(g.wrt_noisy.data()), fd_n), 1e-3) << trial;
  }
}

TEST(CfLoss, PerceptualNeedsEmbedder) {
  const Toy toy;
  const Tensor x({2}, {0.f, 0.f});
  CFConfig cfg;
  cfg.lambda_p = 1.0;
  EXPECT_THROW(cf_loss_gradient(x, x, x, kA, toy.classifier, cfg), ConfigError);
  const Embedder id = [](const Tensor& v) { return v * 2.0f; };
  const Tensor y({2}, {1.f, 0.f});
  const LossGradient g = cf_loss_gradient(y, x, x, kA, toy.classifier, cfg, &id);
  EXPECT_DOUBLE_EQ(g.terms.perceptual, 4.0);
}

// ----------------------------------------------------------- strategies

TEST(Surrogate, OneCallAndExactLimit) {
  const Toy toy;
  const NoiseSchedule fine = make_linear_schedule(1000);
  Rng rng(6);
  CFConfig cfg = toy.config(GradientStrategy::kSurrogate);
  cfg.lambda_1 = 0.7;
  cfg.l1_target = L1Target::kDenoised;
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor x0 = Tensor::randn({2}, rng);
    const Tensor eps = Tensor::randn({2}, rng);
    const Tensor x_orig = toy.sample_b(rng);
    const Tensor xt = forward_sample(fine, x0, 1, eps);
    const FixedNoise exact(eps, 1000);
    const CountingDenoiser counted(exact);
    const LossContext ctx{x_orig, kA, toy.classifier, cfg};
    const Guidance g = gradient_surrogate(xt, 1, counted, fine, ctx);
    EXPECT_EQ(counted.counts(), (CallCounts{1, 0}));
    const LossGradient want = cf_loss_gradient(x0, x_orig, xt, kA, toy.classifier, cfg);
    for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(g.gradient.at(i), want.total.at(i), 1e-5);
  }
}

TEST(Surrogate, GuidancePointsTowardTargetMean) {
  const Toy toy;
  const CFConfig cfg = toy.config(GradientStrategy::kSurrogate);
  Rng rng(7);
  int good = 0;
  const int states = 1000;
  for (int i = 0; i < states; ++i) {
    const int t = rng.uniform_int(1, cfg.tau);
    const Tensor xt = forward_sample(toy.schedule, toy.sample_b(rng), t, Tensor::randn({2}, rng));
    const Tensor x0 = toy.sample_b(rng);
    const LossContext ctx{x0, kA, toy.classifier, cfg};
    const Guidance g = gradient_surrogate(xt, t, toy.denoiser, toy.schedule, ctx);
    // The reverse step moves along -gradient.
    const double dot = -g.gradient.at(0) * (toy.prior.means[0][0] - g.denoised.at(0)) -
                       g.gradient.at(1) * (toy.prior.means[0][1] - g.denoised.at(1));
    good += dot > 0;
  }
  EXPECT_GE(good, 950);
}

TEST(ThroughDenoiser, IdentityDenoiserScalesSurrogate) {
  const Toy toy;
  const ZeroNoise zero(100);
  Rng rng(8);
  CFConfig cfg = toy.config(GradientStrategy::kThroughDenoiser);
  cfg.lambda_1 = 2.0;
  cfg.l1_target = L1Target::kDenoised;
  for (int t : {1, 10, 50, 100}) {
    const Tensor xt = Tensor::randn({2}, rng);
    const Tensor x0 = toy.sample_b(rng);
    const LossContext ctx{x0, kA, toy.classifier, cfg};
    const Guidance through = gradient_through_denoiser(xt, t, zero, toy.schedule, ctx);
    const Guidance sur = gradient_surrogate(xt, t, zero, toy.schedule, ctx);
    const double scale = 1.0 / std::sqrt(toy.schedule.alpha_bar(t));
    for (std::size_t i = 0; i < 2; ++i) {
      EXPECT_NEAR(through.gradient.at(i), sur.gradient.at(i) * scale,
                  1e-5 * std::max(1.0, std::abs(sur.gradient.at(i) * scale)));
    }
  }
}

TEST(ThroughDenoiser, MatchesFiniteDifferencesAndCounts) {
  Image img;
  Rng rng(9);
  CFConfig cfg;
  cfg.lambda_c = 2.0;
  cfg.lambda_1 = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    const int t = rng.uniform_int(1, 20);
    const Tensor xt = Tensor::randn(img.shape, rng);
    const Tensor x0 = Tensor::randn(img.shape, rng);
    const LossContext ctx{x0, 1, img.classifier, cfg};
    const CountingDenoiser counted(img.denoiser);
    const Guidance g = gradient_through_denoiser(xt, t, counted, img.schedule, ctx);
    EXPECT_EQ(counted.counts(), (CallCounts{1, 1}));
    const auto fd = finite_difference(
        [&](const Tensor& v) {
          const Tensor xb = denoised_estimate(img.schedule, v, img.denoiser.predict_noise(v, t), t);
          return cf_loss(xb, v, ctx).total.item();
        },
        xt, kStep);
    EXPECT_LT(relative_error(to_double(g.gradient.data()), fd), 1e-3) << "t " << t;
  }
  // The analytic toy denoiser Jacobian as well.
  const Toy toy;
  const CFConfig tc = toy.config(GradientStrategy::kThroughDenoiser);
  for (int t : {3, 12, 25}) {
    const Tensor xt = Tensor::randn({2}, rng);
    const Tensor x0 = toy.sample_b(rng);
    const LossContext ctx{x0, kA, toy.classifier, tc};
    const Guidance g = gradient_through_denoiser(xt, t, toy.denoiser, toy.schedule, ctx);
    const auto fd = finite_difference(
        [&](const Tensor& v) {
          const Tensor xb =
              denoised_estimate(toy.schedule, v, toy.denoiser.predict_noise(v, t), t);
          return cf_loss(xb, v, ctx).total.item();
        },
        xt);  // the mixture posterior bends sharply; keep the step small
    EXPECT_LT(relative_error(to_double(g.gradient.data()), fd), 1e-3) << "t " << t;
  }
}

TEST(InnerChain, SingleStepMatchesFiniteDifferences) {
  Image img;
  Rng rng(10);
  CFConfig cfg;
  cfg.lambda_c = 1.5;
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor xt = Tensor::randn(img.shape, rng);
    const Tensor x0 = Tensor::randn(img.shape, rng);
    const LossContext ctx{x0, 0, img.classifier, cfg};
    Rng inner(11);
    const Guidance g = gradient_inner_chain(xt, 1, img.denoiser, img.schedule, inner, ctx);
    const auto fd = finite_difference(
        [&](const Tensor& v) {
          Rng unused(11);
          const Tensor xhat = posterior_step(img.schedule, img.denoiser, v, 1, unused).sample;
          return cf_loss(xhat, v, ctx).total.item();
        },
        xt, kStep);
    EXPECT_LT(relative_error(to_double(g.gradient.data()), fd), 1e-3);
  }
}

TEST(InnerChain, CountsAndTapeBudget) {
  Image img;
  Rng rng(12);
  CFConfig cfg;
  const Tensor xt = Tensor::randn(img.shape, rng), x0 = Tensor::randn(img.shape, rng);
  const LossContext ctx{x0, 0, img.classifier, cfg};
  for (int t : {1, 3, 7}) {
    const CountingDenoiser counted(img.denoiser);
    gradient_inner_chain(xt, t, counted, img.schedule, rng, ctx);
    EXPECT_EQ(counted.counts(), (CallCounts{t, t}));
  }
  cfg.tape_budget_bytes = 1024;
  EXPECT_THROW(gradient_inner_chain(xt, 5, img.denoiser, img.schedule, rng, ctx), ResourceError);
  EXPECT_THROW(gradient_inner_chain(xt, 0, img.denoiser, img.schedule, rng, ctx), IndexError);
}

// ---------------------------------------------------------- call counts

TEST(CallCounts, ClosedForm) {
  const NoiseSchedule s = make_linear_schedule(200);
  CFConfig cfg;
  cfg.tau = 4;
  cfg.tau_w = 2;
  cfg.strategy = GradientStrategy::kSurrogate;
  EXPECT_EQ(count_denoiser_calls(cfg, s), (CallCounts{4, 0}));
  cfg.strategy = GradientStrategy::kThroughDenoiser;
  EXPECT_EQ(count_denoiser_calls(cfg, s), (CallCounts{4, 4}));
  cfg.strategy = GradientStrategy::kInnerChain;
  EXPECT_EQ(count_denoiser_calls(cfg, s), (CallCounts{14, 10}));

  cfg.tau = 60;
  cfg.tau_w = 30;
  const auto inner = count_denoiser_calls(cfg, s);
  cfg.strategy = GradientStrategy::kSurrogate;
  const auto sur = count_denoiser_calls(cfg, s);
  EXPECT_EQ(inner.forward, 1890);
  EXPECT_DOUBLE_EQ(static_cast<double>(inner.forward) / static_cast<double>(sur.forward), 31.5);
  cfg.variant = Variant::kTwoStepPlus;
  EXPECT_EQ(count_denoiser_calls(cfg, s), (CallCounts{120, 0}));
}

TEST(CallCounts, InstrumentedRunsMatchPrediction) {
  const Toy toy;
  for (int tau : {4, 10, 25}) {
    for (auto strategy : {GradientStrategy::kSurrogate, GradientStrategy::kThroughDenoiser,
                          GradientStrategy::kInnerChain}) {
      for (auto variant : {Variant::kSingle, Variant::kTwoStep, Variant::kTwoStepPlus}) {
        CFConfig cfg = toy.config(strategy);
        cfg.tau = tau;
        cfg.tau_w = std::max(1, tau / 2);
        cfg.variant = variant;
        cfg.masking_enabled = variant != Variant::kTwoStep;
        Rng rng(static_cast<std::uint64_t>(tau));
        const CFResult r = generate(toy.sample_b(rng), kA, toy.denoiser, toy.classifier,
                                    toy.schedule, cfg, rng);
        EXPECT_EQ(r.calls, count_denoiser_calls(cfg, toy.schedule))
            << "tau " << tau << " " << strategy_name(strategy) << " " << variant_name(variant);
        if (variant == Variant::kSingle) {
          EXPECT_EQ(r.trace.size(), static_cast<std::size_t>(tau));
          EXPECT_EQ(r.trace.back().calls, r.calls);
        }
      }
    }
  }
}

// ------------------------------------------------------------ generation

TEST(Generate, GuidanceOffIsUnconditionalReconstruction) {
  const Toy toy;
  CFConfig cfg = toy.config(GradientStrategy::kSurrogate);
  cfg.lambda_c = 0.0;
  const Rng root(13);
  std::vector<double> cf_x, cf_y, rec_x, rec_y;
  int cf_a = 0, rec_a = 0;
  const int runs = 2000;
  for (int i = 0; i < runs; ++i) {
    Rng rng = root.fork(static_cast<std::uint64_t>(i));
    const auto v = toy.prior.sample(rng);
    const Tensor x({2}, {static_cast<float>(v[0]), static_cast<float>(v[1])});
    const Tensor c = generate_counterfactual(x, kA, toy.denoiser, toy.classifier, toy.schedule,
                                             cfg, rng)
                         .counterfactual;
    Rng other = root.fork(static_cast<std::uint64_t>(runs + i));
    const Tensor xt = forward_sample(toy.schedule, x, cfg.tau, Tensor::randn({2}, other));
    const Tensor r = unconditional_sample(toy.schedule, toy.denoiser, {2}, other, cfg.tau, xt);
    cf_x.push_back(c.at(0));
    cf_y.push_back(c.at(1));
    rec_x.push_back(r.at(0));
    rec_y.push_back(r.at(1));
    cf_a += c.at(0) < 0;
    rec_a += r.at(0) < 0;
  }
  EXPECT_NEAR(static_cast<double>(cf_a) / runs, static_cast<double>(rec_a) / runs, 0.05);
  EXPECT_GT(testing::ks_two_sample_p(cf_x, rec_x), 0.01);
  EXPECT_GT(testing::ks_two_sample_p(cf_y, rec_y), 0.01);
}

TEST(Generate, SurrogateFlipsToyClass) {
  const Toy toy;
  EXPECT_GE(toy.flip_ratio(toy.config(GradientStrategy::kSurrogate), 200, 14), 0.95);
}

TEST(Generate, InnerChainFlipsToyClass) {
  const Toy toy;
  EXPECT_GE(toy.flip_ratio(toy.config(GradientStrategy::kInnerChain), 200, 15), 0.9);
}

TEST(Generate, TwoStepPlusKeepsQuality) {
  const Toy toy;
  CFConfig single = toy.config(GradientStrategy::kSurrogate);
  single.masking_enabled = true;
  CFConfig plus = single;
  plus.variant = Variant::kTwoStepPlus;
  EXPECT_GE(toy.flip_ratio(plus, 200, 16), toy.flip_ratio(single, 200, 16) - 0.05);
}

TEST(Generate, ClassifierTermActiveAfterMasking) {
  Image img;
  CFConfig cfg;
  cfg.tau = 12;
  cfg.tau_w = 6;
  cfg.lambda_c = 4.0;
  cfg.dilation = 3;
  Rng rng(17);
  const Tensor x = Tensor::randn(img.shape, rng);
  const CFResult r =
      generate_counterfactual(x, 1, img.denoiser, img.classifier, img.schedule, cfg, rng);
  ASSERT_EQ(r.trace.size(), 12u);
  for (const CFStep& s : r.trace) {
    EXPECT_EQ(s.mask_active, s.t <= cfg.tau_w) << s.t;
    EXPECT_TRUE(std::isfinite(s.classifier_loss));
    EXPECT_GT(s.classifier_loss, 0.0) << s.t;
    EXPECT_NEAR(s.loss, cfg.lambda_c * s.classifier_loss, 1e-4 * std::max(1.0, s.loss));
  }
  // Dropping the classifier weight changes the result on the same stream.
  CFConfig off = cfg;
  off.lambda_c = 0.0;
  Rng a(18), b(18);
  const CFResult on_run =
      generate_counterfactual(x, 1, img.denoiser, img.classifier, img.schedule, cfg, a);
  const CFResult off_run =
      generate_counterfactual(x, 1, img.denoiser, img.classifier, img.schedule, off, b);
  EXPECT_NE(to_double(on_run.counterfactual.data()), to_double(off_run.counterfactual.data()));
}

TEST(Generate, FixedMaskPreservesOutsidePixelsExactly) {
  Image img;
  Rng rng(19);
  const Tensor x = Tensor::randn(img.shape, rng);
  Tensor m = Tensor::zeros(img.shape);
  for (std::size_t i = 0; i < m.numel(); ++i) m.mutable_data()[i] = (i % 6) < 3 ? 1.0f : 0.0f;
  const MaskState fixed{m, true};
  CFConfig cfg;
  cfg.tau = 10;
  cfg.tau_w = 10;
  cfg.record_denoised = true;
  for (const MaskState* mask : {&fixed}) {
    const CFResult r = generate_counterfactual(x, 0, img.denoiser, img.classifier, img.schedule,
                                               cfg, rng, nullptr, mask);
    for (const CFStep& s : r.trace) {
      ASSERT_TRUE(s.mask_active);
      for (std::size_t i = 0; i < m.numel(); ++i) {
        if (m.at(i) == 0.0f) {
          ASSERT_EQ(s.denoised[i], x.at(i)) << "t " << s.t;
        }
      }
    }
  }
  // An all-zero fixed mask pins the whole denoised state to x_0.
  const MaskState none = empty_mask(img.shape);
  const CFResult r = generate_counterfactual(x, 0, img.denoiser, img.classifier, img.schedule,
                                             cfg, rng, nullptr, &none);
  const std::vector<float> flat(x.data().begin(), x.data().end());
  for (const CFStep& s : r.trace) EXPECT_EQ(s.denoised, flat);
}

TEST(Generate, DeterministicForSeed) {
  const Toy toy;
  for (auto strategy : {GradientStrategy::kSurrogate, GradientStrategy::kInnerChain}) {
    CFConfig cfg = toy.config(strategy);
    cfg.tau = 8;
    cfg.tau_w = 4;
    Rng a(20), b(20);
    Rng src(21);
    const Tensor x = toy.sample_b(src);
    const CFResult r1 = generate(x, kA, toy.denoiser, toy.classifier, toy.schedule, cfg, a);
    const CFResult r2 = generate(x, kA, toy.denoiser, toy.classifier, toy.schedule, cfg, b);
    EXPECT_EQ(to_double(r1.counterfactual.data()), to_double(r2.counterfactual.data()));
  }
}

TEST(Generate, InvalidConfigs) {
  const Toy toy;
  Rng rng(22);
  const Tensor x({2}, {1.f, 0.f});
  const auto run = [&](CFConfig c) {
    return generate(x, kA, toy.denoiser, toy.classifier, toy.schedule, c, rng);
  };
  CFConfig c = toy.config(GradientStrategy::kSurrogate);
  c.tau = 101;
  EXPECT_THROW(run(c), ConfigError);
  c = toy.config(GradientStrategy::kSurrogate);
  c.tau_w = 26;
  EXPECT_THROW(run(c), ConfigError);
  c = toy.config(GradientStrategy::kSurrogate);
  c.dilation = 4;
  EXPECT_THROW(run(c), ConfigError);
  c = toy.config(GradientStrategy::kSurrogate);
  c.mask_threshold = 0.0;
  EXPECT_THROW(run(c), ConfigError);
  c = toy.config(GradientStrategy::kSurrogate);
  EXPECT_THROW(generate_two_step(x, kA, toy.denoiser, toy.classifier, toy.schedule, c, rng),
               ConfigError);
  EXPECT_THROW(parse_strategy("fast"), ConfigError);
  EXPECT_EQ(parse_variant("two-step-plus"), Variant::kTwoStepPlus);
}

}  // namespace
}  // namespace fastcf
