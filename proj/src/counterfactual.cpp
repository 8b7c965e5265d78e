// Copyright 2026 The fastcf Authors
// SPDX-License-Identifier: Apache-2.0

#include "fastcf/counterfactual.hpp"

#include <cmath>
#include <string>
#include <tuple>

#include "fastcf/diffusion.hpp"
#include "fastcf/errors.hpp"
#include "fastcf/ops.hpp"
#include "fastcf/rng.hpp"

namespace fastcf {
namespace {

Tensor grad_or_zeros(const Tensor& leaf) {
  return leaf.has_grad() ? leaf.grad_tensor() : Tensor::zeros(leaf.shape());
}

Tensor fresh_leaf(const Tensor& x) { return x.detach().set_requires_grad(); }

// Stream keys for substreams derived from a chain's generator.
constexpr std::uint64_t kInnerChainStream = 0x1000;

}  // namespace

std::string_view strategy_name(GradientStrategy s) {
  switch (s) {
    case GradientStrategy::kInnerChain: return "inner-chain";
    case GradientStrategy::kThroughDenoiser: return "through-denoiser";
    case GradientStrategy::kSurrogate: return "surrogate";
  }
  return "?";
}

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::kSingle: return "single";
    case Variant::kTwoStep: return "two-step";
    case Variant::kTwoStepPlus: return "two-step-plus";
  }
  return "?";
}

std::string_view l1_target_name(L1Target t) {
  return t == L1Target::kNoisy ? "noisy" : "denoised";
}

GradientStrategy parse_strategy(std::string_view name) {
  for (auto s : {GradientStrategy::kInnerChain, GradientStrategy::kThroughDenoiser,
                 GradientStrategy::kSurrogate}) {
    if (strategy_name(s) == name) return s;
  }
  throw ConfigError("unknown gradient strategy '" + std::string(name) + "'");
}

Variant parse_variant(std::string_view name) {
  for (auto v : {Variant::kSingle, Variant::kTwoStep, Variant::kTwoStepPlus}) {
    if (variant_name(v) == name) return v;
  }
  throw ConfigError("unknown variant '" + std::string(name) + "'");
}

L1Target parse_l1_target(std::string_view name) {
  if (name == "noisy") return L1Target::kNoisy;
  if (name == "denoised") return L1Target::kDenoised;
  throw ConfigError("unknown l1 target '" + std::string(name) + "'");
}

void CFConfig::validate(int steps) const {
  if (tau < 1 || tau > steps) {
    throw ConfigError("tau " + std::to_string(tau) + " outside [1, " + std::to_string(steps) + "]");
  }
  if (tau_w < 1 || tau_w > tau) {
    throw ConfigError("tau_w " + std::to_string(tau_w) + " outside [1, tau]");
  }
  if (dilation < 1 || dilation % 2 == 0) throw ConfigError("dilation must be odd and >= 1");
  if (!(mask_threshold > 0.0 && mask_threshold < 1.0)) {
    throw ConfigError("mask threshold must lie in (0, 1)");
  }
  for (double l : {lambda_c, lambda_1, lambda_p}) {
    if (!std::isfinite(l) || l < 0.0) throw ConfigError("loss weights must be finite and >= 0");
  }
}

LossTerms cf_loss(const Tensor& x_eval, const Tensor& x_noisy, const LossContext& ctx) {
  if (x_eval.shape() != ctx.x0.shape() || x_noisy.shape() != ctx.x0.shape()) {
    throw ShapeError("cf_loss: x_eval " + shape_string(x_eval.shape()) + ", x_noisy " +
                     shape_string(x_noisy.shape()) + ", x_0 " + shape_string(ctx.x0.shape()));
  }
  const CFConfig& cfg = ctx.config;
  if (cfg.lambda_p > 0.0 && ctx.embedder == nullptr) {
    throw ConfigError("lambda_p > 0 requires an embedder");
  }
  LossTerms r;
  const Tensor lc = cross_entropy(ctx.classifier, x_eval, ctx.target);
  r.classifier = lc.item();
  r.target_prob = std::exp(-r.classifier);
  Tensor total = lc * static_cast<float>(cfg.lambda_c);
  if (cfg.lambda_1 > 0.0) {
    const Tensor& ref = cfg.l1_target == L1Target::kNoisy ? x_noisy : x_eval;
    const Tensor l1 = mean(abs(ref - ctx.x0));
    r.l1 = l1.item();
    total = total + l1 * static_cast<float>(cfg.lambda_1);
  }
  if (cfg.lambda_p > 0.0) {
    const Tensor f0 = (*ctx.embedder)(ctx.x0).detach();
    const Tensor lp = sum(square((*ctx.embedder)(x_eval) - f0));
    r.perceptual = lp.item();
    total = total + lp * static_cast<float>(cfg.lambda_p);
  }
  r.total = total;
  return r;
}

LossGradient cf_loss_gradient(const Tensor& x_eval, const Tensor& x0, const Tensor& x_noisy,
                              std::size_t target, const Classifier& classifier,
                              const CFConfig& config, const Embedder* embedder) {
  const LossContext ctx{x0, target, classifier, config, embedder};
  Tensor xe = fresh_leaf(x_eval);
  Tensor xn = fresh_leaf(x_noisy);
  LossTerms terms = cf_loss(xe, xn, ctx);
  backward(terms.total);
  LossGradient g{grad_or_zeros(xe), grad_or_zeros(xn), Tensor(), terms};
  g.total = (g.wrt_eval + g.wrt_noisy).detach();
  return g;
}

Tensor CountingDenoiser::predict_noise(const Tensor& x_t, int t) const {
  ++counts_.forward;
  Tensor eps = inner_.predict_noise(x_t, t);
  if (!eps.requires_grad()) return eps;
  return on_backward(eps, [this] { ++counts_.backward; });
}

Guidance gradient_surrogate(const Tensor& x_t, int t, const NoisePredictor& model,
                            const NoiseSchedule& schedule, const LossContext& ctx) {
  const Tensor x = x_t.detach();
  const Tensor xbar = denoised_estimate(schedule, x, model.predict_noise(x, t), t);
  LossGradient g = cf_loss_gradient(xbar, ctx.x0, x, ctx.target, ctx.classifier, ctx.config,
                                    ctx.embedder);
  return {g.total, xbar, g.terms};
}

Guidance gradient_through_denoiser(const Tensor& x_t, int t, const NoisePredictor& model,
                                   const NoiseSchedule& schedule, const LossContext& ctx) {
  Tensor x = fresh_leaf(x_t);
  const Tensor xbar = denoised_estimate(schedule, x, model.predict_noise(x, t), t);
  LossTerms terms = cf_loss(xbar, x, ctx);
  backward(terms.total);
  return {grad_or_zeros(x), xbar.detach(), terms};
}

Guidance gradient_inner_chain(const Tensor& x_t, int t, const NoisePredictor& model,
                              const NoiseSchedule& schedule, Rng& rng, const LossContext& ctx) {
  if (t < 1) throw IndexError("inner chain needs t >= 1");
  Tensor x = fresh_leaf(x_t);
  Tensor xhat = x;
  for (int s = t; s >= 1; --s) xhat = posterior_step(schedule, model, xhat, s, rng).sample;
  LossTerms terms = cf_loss(xhat, x, ctx);
  const Tape tape(terms.total);
  if (tape.bytes() > ctx.config.tape_budget_bytes) {
    throw ResourceError("inner chain of length " + std::to_string(t) + " records " +
                        std::to_string(tape.size()) + " ops / " + std::to_string(tape.bytes()) +
                        " bytes, over the budget of " +
                        std::to_string(ctx.config.tape_budget_bytes) + " bytes");
  }
  tape.backward();
  return {grad_or_zeros(x), xhat.detach(), terms};
}

CFResult generate_counterfactual(const Tensor& x, std::size_t target, const NoisePredictor& model,
                                 const Classifier& classifier, const NoiseSchedule& schedule,
                                 const CFConfig& config, Rng& rng, const Embedder* embedder,
                                 const MaskState* fixed_mask) {
  config.validate(schedule.steps());
  const Tensor x0 = x.detach();
  const LossContext ctx{x0, target, classifier, config, embedder};
  const CountingDenoiser counted(model);

  CFResult result;
  result.target = target;
  result.mask = empty_mask(x0.shape());
  Tensor xt = forward_sample(schedule, x0, config.tau, Tensor::randn(x0.shape(), rng));

  for (int t = config.tau; t >= 1; --t) {
    const bool through = config.strategy == GradientStrategy::kThroughDenoiser;
    const Tensor x_in = through ? fresh_leaf(xt) : xt.detach();
    Tensor xbar = denoised_estimate(schedule, x_in, counted.predict_noise(x_in, t), t);

    Tensor x_state = x_in;
    Tensor xbar_state = xbar;
    const bool masking = (config.masking_enabled || fixed_mask != nullptr) && t <= config.tau_w;
    if (masking) {
      result.mask = fixed_mask != nullptr
                        ? MaskState{fixed_mask->mask, true}
                        : extract_mask(xbar.detach(), x0, config.mask_threshold, config.dilation);
      const Tensor fresh = forward_sample(schedule, x0, t, Tensor::randn(x0.shape(), rng));
      std::tie(x_state, xbar_state) = apply_mask(result.mask, x_in, xbar, fresh, x0);
    }

    Tensor grad;
    LossTerms terms;
    switch (config.strategy) {
      case GradientStrategy::kSurrogate: {
        LossGradient g = cf_loss_gradient(xbar_state, x0, x_state, target, classifier, config,
                                          embedder);
        grad = g.total;
        terms = g.terms;
        break;
      }
      case GradientStrategy::kThroughDenoiser: {
        terms = cf_loss(xbar_state, x_state, ctx);
        backward(terms.total);
        grad = grad_or_zeros(x_in);
        break;
      }
      case GradientStrategy::kInnerChain: {
        Rng inner = rng.fork(kInnerChainStream + static_cast<std::uint64_t>(t));
        Guidance g = gradient_inner_chain(x_state.detach(), t, counted, schedule, inner, ctx);
        grad = g.gradient;
        terms = g.terms;
        break;
      }
    }

    const double var = schedule.posterior_variance(t);
    Tensor mu = posterior_mean(schedule, x_state.detach(), xbar_state.detach(), t);
    if (var > 0.0) mu = mu - grad * static_cast<float>(var);
    xt = t > 1 ? mu + Tensor::randn(x0.shape(), rng) * static_cast<float>(std::sqrt(var)) : mu;

    CFStep step;
    step.t = t;
    step.loss = terms.total.item();
    step.classifier_loss = terms.classifier;
    step.target_prob = terms.target_prob;
    step.mask_active = masking;
    step.mask_coverage = masking ? result.mask.coverage() : 0.0;
    step.calls = counted.counts();
    if (config.record_denoised) {
      auto d = xbar_state.data();
      step.denoised.assign(d.begin(), d.end());
    }
    result.trace.push_back(std::move(step));
  }

  result.counterfactual = xt.detach();
  result.calls = counted.counts();
  const std::vector<double> probs = classify(classifier, result.counterfactual);
  result.target_prob = probs.at(target);
  result.success = predicted_label(classifier, result.counterfactual) == target;
  return result;
}

CFResult generate_two_step(const Tensor& x, std::size_t target, const NoisePredictor& model,
                           const Classifier& classifier, const NoiseSchedule& schedule,
                           const CFConfig& config, Rng& rng, const Embedder* embedder) {
  if (config.variant == Variant::kSingle) {
    throw ConfigError("generate_two_step needs a two-step variant");
  }
  CFConfig first = config;
  first.variant = Variant::kSingle;
  first.masking_enabled = config.variant == Variant::kTwoStepPlus;
  const CFResult pass1 =
      generate_counterfactual(x, target, model, classifier, schedule, first, rng, embedder);
  const MaskState fixed =
      extract_mask(pass1.counterfactual, x, config.mask_threshold, config.dilation);

  CFConfig second = first;
  second.masking_enabled = true;
  CFResult pass2 = generate_counterfactual(x, target, model, classifier, schedule, second, rng,
                                           embedder, &fixed);
  pass2.calls += pass1.calls;
  for (CFStep& s : pass2.trace) s.calls += pass1.calls;
  return pass2;
}

CFResult generate(const Tensor& x, std::size_t target, const NoisePredictor& model,
                  const Classifier& classifier, const NoiseSchedule& schedule,
                  const CFConfig& config, Rng& rng, const Embedder* embedder) {
  if (config.variant == Variant::kSingle) {
    return generate_counterfactual(x, target, model, classifier, schedule, config, rng, embedder);
  }
  return generate_two_step(x, target, model, classifier, schedule, config, rng, embedder);
}

CallCounts count_denoiser_calls(const CFConfig& config, const NoiseSchedule& schedule) {
  config.validate(schedule.steps());
  const std::int64_t tau = config.tau;
  CallCounts c;
  switch (config.strategy) {
    case GradientStrategy::kSurrogate: c = {tau, 0}; break;
    case GradientStrategy::kThroughDenoiser: c = {tau, tau}; break;
    case GradientStrategy::kInnerChain: c = {tau + tau * (tau + 1) / 2, tau * (tau + 1) / 2}; break;
  }
  if (config.variant != Variant::kSingle) {
    c.forward *= 2;
    c.backward *= 2;
  }
  return c;
}

}  // namespace fastcf
