// Copyright 2026 The fastcf Authors
// SPDX-License-Identifier: Apache-2.0

#include "fastcf/shortcut.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>

#include "fastcf/diffusion.hpp"
#include "fastcf/errors.hpp"
#include "fastcf/metrics.hpp"
#include "fastcf/rng.hpp"

namespace fastcf {

void SynthParams::validate() const {
  if (size < 8) throw ParameterError("image size must be >= 8");
  if (!(noise_sigma >= 0.0)) throw ParameterError("noise sigma must be >= 0");
  if (marker == 0 || corner_extent() * 2 > size) throw ParameterError("marker does not fit");
  if (!(minor_lo > 0.0 && minor_lo <= minor_hi)) throw ParameterError("bad minor axis range");
  if (!(ratio_neg_lo >= 1.0 && ratio_neg_hi < ratio_pos_lo && ratio_pos_lo <= ratio_pos_hi)) {
    throw ParameterError("class axis-ratio ranges must be ordered and disjoint");
  }
}

namespace {

double uniform_in(Rng& rng, double lo, double hi) { return lo + (hi - lo) * rng.uniform(); }

}  // namespace

LabeledSample synth_sample(const SynthParams& p, int y, int s, Rng& rng) {
  if ((y != 0 && y != 1) || (s != 0 && s != 1)) throw ParameterError("labels must be 0 or 1");
  const std::size_t n = p.size;
  const double cx = uniform_in(rng, p.center_lo, p.center_hi);
  const double cy = uniform_in(rng, p.center_lo, p.center_hi);
  const double b = uniform_in(rng, p.minor_lo, p.minor_hi);
  const double ratio = y == 1 ? uniform_in(rng, p.ratio_pos_lo, p.ratio_pos_hi)
                              : uniform_in(rng, p.ratio_neg_lo, p.ratio_neg_hi);
  const double a = ratio * b;
  const double theta = uniform_in(rng, 0.0, std::numbers::pi);
  const double level = uniform_in(rng, p.intensity_lo, p.intensity_hi);
  const double ct = std::cos(theta), st = std::sin(theta);

  std::vector<float> img(n * n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      const double dx = static_cast<double>(c) + 0.5 - cx;
      const double dy = static_cast<double>(r) + 0.5 - cy;
      const double u = (dx * ct + dy * st) / a;
      const double v = (-dx * st + dy * ct) / b;
      // Roughly one pixel of anti-aliased edge along the minor axis.
      const double cover = std::clamp((1.0 - std::sqrt(u * u + v * v)) * b + 0.5, 0.0, 1.0);
      img[r * n + c] = static_cast<float>(p.background + cover * (level - p.background));
    }
  }
  if (s == 1) {
    const int corner = rng.uniform_int(0, 3);
    const auto off = static_cast<std::size_t>(rng.uniform_int(1, static_cast<int>(p.marker_margin)));
    const std::size_t r0 = (corner & 1) ? n - off - p.marker : off;
    const std::size_t c0 = (corner & 2) ? n - off - p.marker : off;
    for (std::size_t r = r0; r < r0 + p.marker; ++r) {
      for (std::size_t c = c0; c < c0 + p.marker; ++c) img[r * n + c] = static_cast<float>(p.marker_value);
    }
  }
  for (float& v : img) {
    v = static_cast<float>(std::clamp(v + p.noise_sigma * rng.normal(), -1.0, 1.0));
  }
  return {Tensor({1, n, n}, std::move(img)), y, s};
}

std::vector<LabeledSample> synth_generate(const SynthParams& p, std::size_t per_cell,
                                          std::uint64_t seed) {
  p.validate();
  Rng rng(seed);
  std::vector<LabeledSample> out;
  out.reserve(4 * per_cell);
  for (std::size_t i = 0; i < per_cell; ++i) {
    for (int y = 0; y < 2; ++y) {
      for (int s = 0; s < 2; ++s) out.push_back(synth_sample(p, y, s, rng));
    }
  }
  return out;
}

namespace {

struct CellCounts {
  std::size_t n[2][2] = {{0, 0}, {0, 0}};  // [y][s]
};

// Exact cell sizes of an n-sample set with k% correlation.
CellCounts cell_targets(int k, std::size_t n) {
  if (k < 50 || k > 100) throw ParameterError("correlation level must lie in [50, 100]");
  if (n % 2 != 0) throw ParameterError("set size must be even");
  const std::size_t half = n / 2;
  if ((half * static_cast<std::size_t>(k)) % 100 != 0) {
    throw ParameterError("k% of " + std::to_string(half) + " is not a whole number");
  }
  const std::size_t pos_s = half * static_cast<std::size_t>(k) / 100;
  CellCounts c;
  c.n[1][1] = pos_s;
  c.n[1][0] = half - pos_s;
  c.n[0][1] = half - pos_s;  // mirrored contamination
  c.n[0][0] = pos_s;
  return c;
}

std::vector<LabeledSample> take_cells(const std::vector<LabeledSample>& pool, CellCounts want,
                                      std::vector<bool>* used) {
  std::vector<LabeledSample> out;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (used && (*used)[i]) continue;
    std::size_t& left = want.n[pool[i].y][pool[i].s];
    if (left == 0) continue;
    --left;
    out.push_back(pool[i]);
    if (used) (*used)[i] = true;
  }
  for (int y = 0; y < 2; ++y) {
    for (int s = 0; s < 2; ++s) {
      if (want.n[y][s] != 0) {
        throw ParameterError("pool short by " + std::to_string(want.n[y][s]) + " samples in cell y=" +
                             std::to_string(y) + " s=" + std::to_string(s));
      }
    }
  }
  return out;
}

}  // namespace

std::vector<LabeledSample> curate_train(const std::vector<LabeledSample>& pool, int k,
                                        std::size_t n) {
  return take_cells(pool, cell_targets(k, n), nullptr);
}

TestSets curate_tests(const std::vector<LabeledSample>& pool, int k, std::size_t n) {
  if (n % 4 != 0) throw ParameterError("test size must be a multiple of 4");
  std::vector<bool> used(pool.size(), false);
  CellCounts balanced;
  for (auto& row : balanced.n) row[0] = row[1] = n / 4;
  TestSets t;
  t.test_u = take_cells(pool, balanced, &used);
  t.test_k = take_cells(pool, cell_targets(k, n), &used);
  return t;
}

std::vector<double> positive_scores(const Classifier& m, const std::vector<LabeledSample>& set) {
  std::vector<double> out;
  out.reserve(set.size());
  for (const LabeledSample& s : set) out.push_back(classify(m, s.image).at(1));
  return out;
}

CounterfactualSet build_cf_testset(const std::vector<LabeledSample>& test_u,
                                   const ClassifierModel& shortcut_classifier,
                                   const NoisePredictor& denoiser, const NoiseSchedule& schedule,
                                   const CFConfig& config, std::uint64_t seed) {
  config.validate(schedule.steps());
  const Rng root(seed);
  const Embedder embedder = [&](const Tensor& x) { return shortcut_classifier.features(x); };
  CounterfactualSet out;
  double l1 = 0.0;
  std::vector<double> target_probs;
  for (std::size_t i = 0; i < test_u.size(); ++i) {
    const LabeledSample& in = test_u[i];
    const auto target = static_cast<std::size_t>(1 - in.s);
    Rng rng = root.fork(i);
    try {
      const CFResult r = generate(in.image, target, denoiser, shortcut_classifier, schedule, config,
                                  rng, config.lambda_p > 0.0 ? &embedder : nullptr);
      out.samples.push_back({r.counterfactual, in.y, static_cast<int>(target)});
      out.kept.push_back(i);
      out.calls += r.calls;
      l1 += l1_distance(in.image, r.counterfactual);
      target_probs.push_back(r.target_prob);
    } catch (const Error& e) {
      ++out.failures;
      out.errors.push_back("sample " + std::to_string(i) + ": " + e.what());
    }
  }
  if (!out.samples.empty()) {
    out.mean_l1 = l1 / static_cast<double>(out.samples.size());
    out.shortcut_flip_ratio = flip_ratio(target_probs);
  }
  return out;
}

CFConfig ShortcutPipelineConfig::default_shortcut_cf() {
  CFConfig c;
  c.tau = 30;
  c.tau_w = 15;
  c.lambda_c = 20.0;
  c.lambda_1 = 0.0;
  c.lambda_p = 0.0;
  c.mask_threshold = 0.15;
  c.dilation = 5;
  c.strategy = GradientStrategy::kSurrogate;
  return c;
}

void ShortcutPipelineConfig::validate() const {
  synth.validate();
  if (levels.empty()) throw ConfigError("no correlation levels");
  if (test_size % 4 != 0) throw ConfigError("test size must be a multiple of 4");
  for (int k : levels) cell_targets(k, train_per_level), cell_targets(k, test_size);
  if (respaced_steps < 2 || respaced_steps > schedule_steps) {
    throw ConfigError("respaced steps outside [2, schedule steps]");
  }
  if (shortcut_train_y && *shortcut_train_y != 0 && *shortcut_train_y != 1) {
    throw ConfigError("shortcut training filter must be 0 or 1");
  }
  cf.validate(respaced_steps);
  if (denoiser_train.max_timestep > 0 && cf.tau > denoiser_train.max_timestep) {
    throw ConfigError("tau exceeds the denoiser's training range");
  }
}

namespace {

std::vector<Tensor> images_of(const std::vector<LabeledSample>& set) {
  std::vector<Tensor> out;
  out.reserve(set.size());
  for (const LabeledSample& s : set) out.push_back(s.image);
  return out;
}

double auroc_of(const Classifier& m, const std::vector<LabeledSample>& set) {
  std::vector<int> labels;
  for (const LabeledSample& s : set) labels.push_back(s.y);
  return auroc(positive_scores(m, set), labels);
}

}  // namespace

DetectionRun run_detection(const ShortcutPipelineConfig& config, std::uint64_t seed) {
  config.validate();
  const auto t0 = std::chrono::steady_clock::now();
  DetectionRun run;
  run.seed = seed;

  // Three disjoint pools from independent substreams.
  const Rng root(seed);
  std::size_t train_cell = 0, test_cell = 0;
  for (int k : config.levels) {
    const CellCounts tr = cell_targets(k, config.train_per_level);
    const CellCounts te = cell_targets(k, config.test_size);
    train_cell = std::max({train_cell, tr.n[0][0], tr.n[0][1], tr.n[1][0], tr.n[1][1]});
    test_cell = std::max({test_cell, te.n[0][0], te.n[0][1], te.n[1][0], te.n[1][1]});
  }
  test_cell += config.test_size / 4;
  const auto train_pool = synth_generate(config.synth, train_cell, root.fork(1).next_u64());
  const auto test_pool = synth_generate(config.synth, test_cell, root.fork(2).next_u64());
  const auto aux_pool =
      synth_generate(config.synth, config.aux_per_cell, root.fork(3).next_u64());

  // Shortcut classifier on s labels of the auxiliary split, with a held-out
  // quarter for its accuracy check.
  std::vector<Tensor> sc_x, hold_x;
  std::vector<int> sc_s, hold_s;
  for (std::size_t i = 0; i < aux_pool.size(); ++i) {
    const LabeledSample& a = aux_pool[i];
    if ((i / 4) % 4 == 3) {
      hold_x.push_back(a.image);
      hold_s.push_back(a.s);
      continue;
    }
    if (config.shortcut_train_y && a.y != *config.shortcut_train_y) continue;
    sc_x.push_back(a.image);
    sc_s.push_back(a.s);
  }
  const ClassifierTraining shortcut =
      train_classifier(sc_x, sc_s, 2, config.shortcut_train, mix_seed(seed, 4));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < hold_x.size(); ++i) {
    correct += predicted_label(*shortcut.model, hold_x[i]) == static_cast<std::size_t>(hold_s[i]);
  }
  run.shortcut_holdout_accuracy = static_cast<double>(correct) / static_cast<double>(hold_x.size());

  const NoiseSchedule schedule =
      respace(make_linear_schedule(config.schedule_steps), config.respaced_steps);
  const DenoiserTraining den =
      train_denoiser(images_of(aux_pool), schedule, config.denoiser_train, mix_seed(seed, 5));
  run.denoiser_losses = den.losses;

  // test_u is the same for every level: its balanced cells are taken first.
  const std::vector<LabeledSample> test_u =
      curate_tests(test_pool, config.levels.front(), config.test_size).test_u;
  const CounterfactualSet cf = build_cf_testset(test_u, *shortcut.model, *den.model, schedule,
                                                config.cf, mix_seed(seed, 6));
  run.calls = cf.calls;
  if (cf.samples.empty()) throw NumericError("every counterfactual generation failed");
  std::vector<LabeledSample> kept_u;
  for (std::size_t i : cf.kept) kept_u.push_back(test_u[i]);

  for (int k : config.levels) {
    const std::vector<LabeledSample> d_k = curate_train(train_pool, k, config.train_per_level);
    const TestSets tests = curate_tests(test_pool, k, config.test_size);
    std::vector<int> ys;
    for (const LabeledSample& s : d_k) ys.push_back(s.y);
    const ClassifierTraining f = train_classifier(images_of(d_k), ys, 2, config.task_train,
                                                  mix_seed(seed, 100 + static_cast<unsigned>(k)));
    ShortcutReport r;
    r.level = k;
    r.auroc_test_k = auroc_of(*f.model, tests.test_k);
    r.auroc_test_u = auroc_of(*f.model, tests.test_u);
    r.auroc_test_uc = auroc_of(*f.model, cf.samples);
    PairedConfidences p;
    p.original = positive_scores(*f.model, kept_u);
    p.counterfactual = positive_scores(*f.model, cf.samples);
    for (const LabeledSample& s : kept_u) p.shortcut.push_back(s.s);
    r.mad = mad(p);
    r.md_s1 = md(p, 1);
    r.md_s0 = md(p, 0);
    r.shortcut_flip_ratio = cf.shortcut_flip_ratio;
    r.mean_l1 = cf.mean_l1;
    r.cf_failures = cf.failures;
    run.levels.push_back(r);
  }
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return run;
}

std::vector<DetectionRun> run_detection(const ShortcutPipelineConfig& config,
                                        const std::vector<std::uint64_t>& seeds) {
  std::vector<DetectionRun> out;
  for (std::uint64_t s : seeds) out.push_back(run_detection(config, s));
  return out;
}

}  // namespace fastcf
