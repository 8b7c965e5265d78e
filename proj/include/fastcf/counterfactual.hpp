// Copyright 2026 The fastcf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string_view>
#include <vector>

#include "fastcf/mask.hpp"
#include "fastcf/models.hpp"
#include "fastcf/schedule.hpp"
#include "fastcf/tensor.hpp"

namespace fastcf {

class Rng;

enum class GradientStrategy { kInnerChain, kThroughDenoiser, kSurrogate };
enum class Variant { kSingle, kTwoStep, kTwoStepPlus };
enum class L1Target { kNoisy, kDenoised };

std::string_view strategy_name(GradientStrategy s);
std::string_view variant_name(Variant v);
std::string_view l1_target_name(L1Target t);
GradientStrategy parse_strategy(std::string_view name);
Variant parse_variant(std::string_view name);
L1Target parse_l1_target(std::string_view name);

struct CFConfig {
  int tau = 30;
  int tau_w = 15;
  double lambda_c = 3.0;
  double lambda_1 = 0.0;
  double lambda_p = 0.0;
  L1Target l1_target = L1Target::kNoisy;
  double mask_threshold = 0.15;
  int dilation = 5;
  GradientStrategy strategy = GradientStrategy::kSurrogate;
  Variant variant = Variant::kSingle;
  bool masking_enabled = true;
  /// Upper bound on recorded tape bytes for the inner-chain strategy.
  std::size_t tape_budget_bytes = std::size_t{512} << 20;
  /// Keep the denoised estimate of every step in the trace.
  bool record_denoised = false;

  /// Throws ConfigError unless 1 <= tau_w <= tau <= steps and the mask
  /// parameters are valid.
  void validate(int steps) const;
};

/// Differentiable feature map used by the perceptual term.
using Embedder = std::function<Tensor(const Tensor&)>;

/// Everything the counterfactual loss needs besides the evaluation points.
struct LossContext {
  const Tensor& x0;
  std::size_t target;
  const Classifier& classifier;
  const CFConfig& config;
  const Embedder* embedder = nullptr;
};

struct LossTerms {
  Tensor total;  // lambda_c L_c + lambda_1 L_1 + lambda_p L_perc (scalar)
  double classifier = 0.0;
  double l1 = 0.0;
  double perceptual = 0.0;
  double target_prob = 0.0;
};

/// Builds the weighted loss. L_c = -log p(target | x_eval); L_1 = mean
/// |x_ref - x0| with x_ref = x_noisy or x_eval per config.l1_target;
/// L_perc = squared feature distance between x_eval and x0.
LossTerms cf_loss(const Tensor& x_eval, const Tensor& x_noisy, const LossContext& ctx);

struct LossGradient {
  Tensor wrt_eval;
  Tensor wrt_noisy;
  Tensor total;  // wrt_eval + wrt_noisy: the guidance when both are the free variable
  LossTerms terms;
};

/// Gradient of cf_loss with x_eval and x_noisy as independent variables.
LossGradient cf_loss_gradient(const Tensor& x_eval, const Tensor& x0, const Tensor& x_noisy,
                              std::size_t target, const Classifier& classifier,
                              const CFConfig& config, const Embedder* embedder = nullptr);

struct CallCounts {
  std::int64_t forward = 0;
  std::int64_t backward = 0;

  bool operator==(const CallCounts&) const = default;
  CallCounts& operator+=(const CallCounts& o) {
    forward += o.forward;
    backward += o.backward;
    return *this;
  }
};

/// Wraps a noise predictor and counts forward evaluations and backward
/// passes through it.
class CountingDenoiser final : public NoisePredictor {
 public:
  explicit CountingDenoiser(const NoisePredictor& inner) : inner_(inner) {}

  Tensor predict_noise(const Tensor& x_t, int t) const override;
  int num_timesteps() const override { return inner_.num_timesteps(); }

  const CallCounts& counts() const { return counts_; }

 private:
  const NoisePredictor& inner_;
  mutable CallCounts counts_;
};

struct Guidance {
  Tensor gradient;  // lambda-weighted, w.r.t. the sampling variable x_t
  Tensor denoised;  // x_bar_t used by the caller's reverse step
  LossTerms terms;
};

/// x_bar from one untaped denoiser call; the loss gradient is taken at
/// x_bar as if it were the free variable.
Guidance gradient_surrogate(const Tensor& x_t, int t, const NoisePredictor& model,
                            const NoiseSchedule& schedule, const LossContext& ctx);

/// x_bar with the denoiser on the tape; gradient pulled back to x_t.
Guidance gradient_through_denoiser(const Tensor& x_t, int t, const NoisePredictor& model,
                                   const NoiseSchedule& schedule, const LossContext& ctx);

/// t taped unconditional reverse steps from x_t to x_hat, loss at x_hat and
/// backpropagation through the whole inner chain. `denoised` holds x_hat.
/// Throws ResourceError when the tape exceeds config.tape_budget_bytes.
Guidance gradient_inner_chain(const Tensor& x_t, int t, const NoisePredictor& model,
                              const NoiseSchedule& schedule, Rng& rng, const LossContext& ctx);

struct CFStep {
  int t = 0;
  double loss = 0.0;
  double classifier_loss = 0.0;
  double target_prob = 0.0;
  bool mask_active = false;
  double mask_coverage = 0.0;
  CallCounts calls;  // cumulative
  std::vector<float> denoised;  // only with config.record_denoised
};

struct CFResult {
  Tensor counterfactual;
  MaskState mask;
  std::vector<CFStep> trace;
  CallCounts calls;
  std::size_t target = 0;
  double target_prob = 0.0;
  bool success = false;
};

/// Single guided pass from x corrupted to level tau. When `fixed_mask` is
/// given it replaces the self-optimized mask for every t <= tau_w.
CFResult generate_counterfactual(const Tensor& x, std::size_t target, const NoisePredictor& model,
                                 const Classifier& classifier, const NoiseSchedule& schedule,
                                 const CFConfig& config, Rng& rng,
                                 const Embedder* embedder = nullptr,
                                 const MaskState* fixed_mask = nullptr);

/// Two passes: the first without (TWO_STEP) or with (TWO_STEP_PLUS) masking,
/// then a second with the mask of the first result held fixed.
CFResult generate_two_step(const Tensor& x, std::size_t target, const NoisePredictor& model,
                           const Classifier& classifier, const NoiseSchedule& schedule,
                           const CFConfig& config, Rng& rng, const Embedder* embedder = nullptr);

/// Dispatches on config.variant.
CFResult generate(const Tensor& x, std::size_t target, const NoisePredictor& model,
                  const Classifier& classifier, const NoiseSchedule& schedule,
                  const CFConfig& config, Rng& rng, const Embedder* embedder = nullptr);

/// Closed-form denoiser calls per sample (both passes for two-step variants).
CallCounts count_denoiser_calls(const CFConfig& config, const NoiseSchedule& schedule);

}  // namespace fastcf
