// Copyright 2026 The fastcf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fastcf/counterfactual.hpp"
#include "fastcf/models.hpp"

namespace fastcf {

/// Two isotropic classes: component 0 is class A (the target), 1 is B.
GmmPrior default_toy_prior();

struct ToyBenchConfig {
  GmmPrior prior = default_toy_prior();
  int schedule_steps = 100;
  int tau = 25;
  int runs = 100;
  std::vector<GradientStrategy> strategies = {GradientStrategy::kSurrogate,
                                              GradientStrategy::kThroughDenoiser,
                                              GradientStrategy::kInnerChain};
  double lambda_c = 3.0;
  bool guidance = true;
  /// Component the starting points are drawn from; the mixture when unset.
  std::optional<std::size_t> start_component = 1;
  /// Replace the closed-form denoiser by an MLP trained on prior samples.
  bool trained_denoiser = false;
  TrainConfig train = {.iterations = 3000, .batch_size = 64, .learning_rate = 0.01,
                       .hidden = {128, 128}};
  std::uint64_t seed = 0;

  /// Throws ConfigError on runs < 1, tau outside the schedule, or classes
  /// closer than 3 standard deviations.
  void validate() const;
};

struct ToyCurve {
  GradientStrategy strategy{};
  /// Distance from mu_A of the run-averaged state: entry k is the denoised
  /// estimate after k guided steps, the last entry is the final point.
  std::vector<double> mean_distance;
  std::vector<double> standard_error;
  /// Average over runs of each final point's own distance to mu_A.
  double per_run_final_distance = 0.0;
  double flip_ratio = 0.0;
  CallCounts calls;  // summed over runs
  double wall_seconds = 0.0;
  std::vector<std::array<double, 2>> finals;
};

struct ToyBenchResult {
  std::vector<ToyCurve> curves;
  std::vector<double> initial_distance;  // distance of the mean start point
};

/// Logistic classifier equal to the Bayes posterior over the prior's two
/// components (exact for equal isotropic variances).
MlpClassifier bayes_classifier(const GmmPrior& prior);

ToyBenchResult run_convergence_benchmark(const ToyBenchConfig& config);

/// step,strategy,mean_distance,stderr rows.
std::string convergence_csv(const ToyBenchResult& result);
/// Standalone SVG line chart, one polyline per strategy.
std::string convergence_svg(const ToyBenchResult& result);
void emit_convergence_plot(const ToyBenchResult& result, const std::filesystem::path& path);

}  // namespace fastcf
