// Copyright 2026 The fastcf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fastcf/counterfactual.hpp"
#include "fastcf/models.hpp"
#include "fastcf/schedule.hpp"
#include "fastcf/tensor.hpp"

namespace fastcf {

class Rng;

/// Grayscale image with task label y and shortcut label s.
struct LabeledSample {
  Tensor image;  // [1, size, size], values in [-1, 1]
  int y = 0;
  int s = 0;
};

/// Appearance of the synthetic images. y = 1 draws an elongated ellipse,
/// y = 0 a round one; s = 1 adds a bright square marker near a corner.
struct SynthParams {
  std::size_t size = 32;
  double background = -0.9;
  double noise_sigma = 0.05;
  double center_lo = 14.0, center_hi = 18.0;
  double minor_lo = 2.5, minor_hi = 3.5;
  double ratio_pos_lo = 1.6, ratio_pos_hi = 2.2;
  double ratio_neg_lo = 1.0, ratio_neg_hi = 1.3;
  double intensity_lo = 0.2, intensity_hi = 0.7;
  std::size_t marker = 5;
  double marker_value = 1.0;
  /// Marker offset from the image border is drawn from [1, marker_margin].
  std::size_t marker_margin = 2;

  /// Side of the square corner region a marker can occupy.
  std::size_t corner_extent() const { return marker_margin + marker; }
  void validate() const;
};

/// One sample with the given labels.
LabeledSample synth_sample(const SynthParams& p, int y, int s, Rng& rng);

/// `per_cell` samples of each (y, s) cell, interleaved (0,0),(0,1),(1,0),(1,1),...
/// Deterministic in `seed`.
std::vector<LabeledSample> synth_generate(const SynthParams& p, std::size_t per_cell,
                                          std::uint64_t seed);

/// Training set of `n` samples with y balanced; among y = 1 exactly k% carry
/// the shortcut, among y = 0 exactly (100 - k)%. Takes the first suitable
/// samples of `pool` in order. Throws ParameterError when the proportions are
/// not whole numbers or the pool runs short.
std::vector<LabeledSample> curate_train(const std::vector<LabeledSample>& pool, int k,
                                        std::size_t n);

struct TestSets {
  std::vector<LabeledSample> test_k;
  std::vector<LabeledSample> test_u;
};

/// test_u (all four cells equal) is taken first, then test_k with D_k's
/// joint distribution from the remaining samples; the two never overlap.
TestSets curate_tests(const std::vector<LabeledSample>& pool, int k, std::size_t n);

/// Counterfactuals toward the opposite shortcut label. Samples whose
/// generation throws are dropped; `kept` indexes the surviving inputs.
struct CounterfactualSet {
  std::vector<LabeledSample> samples;  // y carried over, s = requested target
  std::vector<std::size_t> kept;
  std::size_t failures = 0;
  std::vector<std::string> errors;
  double mean_l1 = 0.0;
  double shortcut_flip_ratio = 0.0;
  CallCounts calls;
};

CounterfactualSet build_cf_testset(const std::vector<LabeledSample>& test_u,
                                   const ClassifierModel& shortcut_classifier,
                                   const NoisePredictor& denoiser, const NoiseSchedule& schedule,
                                   const CFConfig& config, std::uint64_t seed);

struct ShortcutPipelineConfig {
  SynthParams synth;
  std::vector<int> levels = {100, 75, 50};
  std::size_t train_per_level = 600;
  std::size_t test_size = 400;
  /// Per-cell size of the auxiliary split used for the shortcut classifier
  /// and the denoiser.
  std::size_t aux_per_cell = 250;
  /// Restrict the shortcut classifier's training data to one task label.
  std::optional<int> shortcut_train_y;
  TrainConfig task_train = {.iterations = 600, .batch_size = 32, .learning_rate = 0.05, .hidden = {}};
  TrainConfig shortcut_train = {.iterations = 300, .batch_size = 32, .learning_rate = 0.05, .hidden = {}};
  /// The denoiser only ever runs at t <= cf.tau, so training is confined to
  /// the low-noise end of the schedule.
  TrainConfig denoiser_train = {.iterations = 450, .batch_size = 16, .learning_rate = 0.02,
                                .clip_norm = 5.0, .hidden = {}, .channels = 32,
                                .max_timestep = 40};
  int schedule_steps = 1000;
  int respaced_steps = 100;
  CFConfig cf = default_shortcut_cf();

  static CFConfig default_shortcut_cf();
  void validate() const;
};

struct ShortcutReport {
  int level = 0;
  double auroc_test_k = 0.0;
  double auroc_test_u = 0.0;
  double auroc_test_uc = 0.0;
  double mad = 0.0;
  double md_s1 = 0.0;
  double md_s0 = 0.0;
  /// Shortcut classifier's flip ratio on test_u^c (shared by all levels).
  double shortcut_flip_ratio = 0.0;
  double mean_l1 = 0.0;
  std::size_t cf_failures = 0;
};

struct DetectionRun {
  std::uint64_t seed = 0;
  std::vector<ShortcutReport> levels;
  double shortcut_holdout_accuracy = 0.0;
  std::vector<double> denoiser_losses;
  CallCounts calls;
  double seconds = 0.0;
};

/// Full audit for one seed: data, shortcut classifier, denoiser,
/// counterfactual test set, then one task classifier and report per level.
DetectionRun run_detection(const ShortcutPipelineConfig& config, std::uint64_t seed);
std::vector<DetectionRun> run_detection(const ShortcutPipelineConfig& config,
                                        const std::vector<std::uint64_t>& seeds);

/// p(y = 1) under `m` for every sample.
std::vector<double> positive_scores(const Classifier& m, const std::vector<LabeledSample>& set);

}  // namespace fastcf
