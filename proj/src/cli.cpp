// Copyright 2026 The fastcf Authors
// SPDX-License-Identifier: Apache-2.0

#include "fastcf/cli.hpp"

#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "fastcf/counterfactual.hpp"
#include "fastcf/diffusion.hpp"
#include "fastcf/errors.hpp"
#include "fastcf/io.hpp"
#include "fastcf/metrics.hpp"
#include "fastcf/ops.hpp"
#include "fastcf/rng.hpp"
#include "fastcf/shortcut.hpp"
#include "fastcf/toy2d.hpp"

namespace fastcf {
namespace {

using json = nlohmann::ordered_json;

struct Globals {
  std::uint64_t seed = 0;
  std::string out = "out";
  std::string config;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
std::vector<T> parse_list(const std::string& s) {
  std::vector<T> out;
  for (const std::string& item : split_list(s)) {
    std::size_t used = 0;
    T v{};
    try {
      if constexpr (std::is_same_v<T, int>) {
        v = std::stoi(item, &used);
      } else {
        v = static_cast<T>(std::stoull(item, &used));
      }
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw ConfigError("bad list element '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("empty list '" + s + "'");
  return out;
}

// Every option of the chosen subcommand with its resolved value; this is the
// RunConfig embedded in reports.
ConfigMap resolved_config(const CLI::App& app) {
  ConfigMap m;
  for (const CLI::App* level : {app.get_parent(), &app}) {
    if (level == nullptr) continue;
    for (const CLI::Option* opt : level->get_options()) {
      const std::string name = opt->get_single_name();
      if (name.empty() || name == "help" || name == "config" || name == "print-config") continue;
      std::string v;
      if (opt->get_expected_min() == 0) {
        // Flags are written out explicitly so a replayed config cannot flip them.
        v = opt->count() > 0 && opt->as<bool>() ? "true" : "false";
      } else if (opt->count() > 0) {
        for (const std::string& r : opt->results()) v += (v.empty() ? "" : ",") + r;
      } else {
        v = opt->get_default_str();
      }
      m[name] = v;
    }
  }
  return m;
}

fs::path output_dir(const Globals& g, const CLI::App& root) {
  // An explicit --out wins; otherwise FCF_OUT replaces the default.
  if (root.get_option("--out")->count() == 0) {
    if (const char* env = std::getenv("FCF_OUT"); env != nullptr && *env != '\0') return env;
  }
  return g.out;
}

Report make_report(const std::string& command, const Globals& g, const CLI::App& sub) {
  Report r;
  r.command = command;
  r.seed = g.seed;
  r.config = resolved_config(sub);
  return r;
}

void finish(const Report& report, const fs::path& dir, std::ostream& out) {
  write_report(report, dir / report.command);
  save_config(report.config, dir / (report.command + ".config"));
  out << "wrote " << (dir / (report.command + ".json")).string() << "\n";
}

// ------------------------------------------------------------------- datasets

void save_dataset(const std::vector<LabeledSample>& set, const fs::path& dir) {
  std::string labels = "file,y,s\n";
  char name[32];
  for (std::size_t i = 0; i < set.size(); ++i) {
    std::snprintf(name, sizeof name, "%05zu.pgm", i);
    write_pgm(set[i].image, dir / name);
    labels += std::string(name) + "," + std::to_string(set[i].y) + "," +
              std::to_string(set[i].s) + "\n";
  }
  write_file_atomic(dir / "labels.csv", labels);
}

std::vector<LabeledSample> load_dataset(const fs::path& dir) {
  const std::string text = read_file(dir / "labels.csv");
  std::stringstream ss(text);
  std::string line;
  std::getline(ss, line);
  if (line != "file,y,s") throw ParseError("labels.csv: unexpected header '" + line + "'");
  std::vector<LabeledSample> out;
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    const auto f = split_list(line);
    if (f.size() != 3) throw ParseError("labels.csv: malformed row '" + line + "'");
    out.push_back({read_pgm(dir / f[0]), std::stoi(f[1]), std::stoi(f[2])});
  }
  if (out.empty()) throw ParseError("dataset " + dir.string() + " is empty");
  return out;
}

std::vector<std::vector<double>> read_csv_columns(const fs::path& path, std::size_t columns) {
  const std::string text = read_file(path);
  std::stringstream ss(text);
  std::string line;
  std::getline(ss, line);  // header
  std::vector<std::vector<double>> cols(columns);
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    const auto f = split_list(line);
    if (f.size() < columns) throw ParseError(path.string() + ": short row '" + line + "'");
    for (std::size_t c = 0; c < columns; ++c) {
      try {
        cols[c].push_back(std::stod(f[c]));
      } catch (const std::exception&) {
        throw ParseError(path.string() + ": bad number '" + f[c] + "'");
      }
    }
  }
  return cols;
}

// ------------------------------------------------------------------- commands

struct GenDataOpts {
  std::size_t per_cell = 25;
  int level = 0;
  std::size_t count = 0;
  double noise = 0.05;
};

int cmd_gen_data(const GenDataOpts& o, const Globals& g, const CLI::App& sub,
                 const CLI::App& root, std::ostream& out) {
  const fs::path dir = output_dir(g, root);
  SynthParams p;
  p.noise_sigma = o.noise;
  std::vector<LabeledSample> set = synth_generate(p, o.per_cell, g.seed);
  if (o.level != 0) set = curate_train(set, o.level, o.count == 0 ? 2 * o.per_cell : o.count);
  save_dataset(set, dir / "data");
  Report r = make_report("gen-data", g, sub);
  r.rows.push_back({"all", "samples", static_cast<double>(set.size())});
  finish(r, dir, out);
  return 0;
}

struct TrainOpts {
  std::string data;
  bool toy = false;
  int steps = 1000;
  int respace_to = 400;
  int iterations = 450;
  int batch = 16;
  double lr = 0.02;
  double momentum = 0.9;
  double clip = 5.0;
  std::size_t channels = 32;
  int max_timestep = 0;
  std::string label = "y";
  int filter_y = -1;
};

std::vector<Tensor> toy_points(std::size_t n, Rng& rng, std::vector<int>* labels) {
  const GmmPrior prior = default_toy_prior();
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = rng.uniform() < prior.weights[0] ? 0 : 1;
    const auto p = prior.sample(rng, c);
    out.emplace_back(Shape{2}, std::vector<float>{static_cast<float>(p[0]), static_cast<float>(p[1])});
    if (labels) labels->push_back(static_cast<int>(c));
  }
  return out;
}

TrainConfig train_config(const TrainOpts& o) {
  TrainConfig c;
  c.iterations = o.iterations;
  c.batch_size = o.batch;
  c.learning_rate = o.lr;
  c.momentum = o.momentum;
  c.clip_norm = o.clip;
  c.channels = o.channels;
  c.max_timestep = o.max_timestep;
  return c;
}

int cmd_train_denoiser(const TrainOpts& o, const Globals& g, const CLI::App& sub,
                       const CLI::App& root, std::ostream& out) {
  if (o.toy == !o.data.empty()) throw ConfigError("give exactly one of --data or --toy");
  const fs::path dir = output_dir(g, root);
  Rng rng(g.seed);
  std::vector<Tensor> xs;
  if (o.toy) {
    xs = toy_points(4000, rng, nullptr);
  } else {
    for (const LabeledSample& s : load_dataset(o.data)) xs.push_back(s.image);
  }
  const NoiseSchedule schedule = respace(make_linear_schedule(o.steps), o.respace_to);
  TrainConfig cfg = train_config(o);
  if (o.toy) cfg.hidden = {128, 128};
  const DenoiserTraining t = train_denoiser(xs, schedule, cfg, mix_seed(g.seed, 1));
  save_checkpoint(*t.model, dir / "denoiser.fcf");
  Report r = make_report("train-denoiser", g, sub);
  r.rows.push_back({"all", "initial_loss", t.losses.front()});
  r.rows.push_back({"all", "final_loss", t.losses.back()});
  r.details["losses"] = t.losses;
  finish(r, dir, out);
  return 0;
}

int cmd_train_classifier(const TrainOpts& o, const Globals& g, const CLI::App& sub,
                         const CLI::App& root, std::ostream& out) {
  if (o.toy == !o.data.empty()) throw ConfigError("give exactly one of --data or --toy");
  if (o.label != "y" && o.label != "s") throw ConfigError("--label must be y or s");
  const fs::path dir = output_dir(g, root);
  Rng rng(g.seed);
  std::vector<Tensor> xs;
  std::vector<int> ys;
  if (o.toy) {
    xs = toy_points(2000, rng, &ys);
  } else {
    for (const LabeledSample& s : load_dataset(o.data)) {
      if (o.filter_y >= 0 && s.y != o.filter_y) continue;
      xs.push_back(s.image);
      ys.push_back(o.label == "y" ? s.y : s.s);
    }
  }
  TrainConfig cfg = train_config(o);
  if (o.toy) cfg.hidden = {32};
  const ClassifierTraining t = train_classifier(xs, ys, 2, cfg, mix_seed(g.seed, 2));
  save_checkpoint(*t.model, dir / "classifier.fcf");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    correct += predicted_label(*t.model, xs[i]) == static_cast<std::size_t>(ys[i]);
  }
  Report r = make_report("train-classifier", g, sub);
  r.rows.push_back({"all", "final_loss", t.losses.back()});
  r.rows.push_back({"all", "train_accuracy", static_cast<double>(correct) / xs.size()});
  r.details["losses"] = t.losses;
  finish(r, dir, out);
  return 0;
}

struct CfOpts {
  std::string denoiser, classifier, input, data;
  std::size_t limit = 0;
  int target = -1;
  std::string variant = "fastdime";
  std::string strategy;
  // Defaults are the high-resolution grayscale setting.
  int tau = 160;
  int tau_w = -1;
  double lambda_c = 1.0, lambda_1 = 50.0, lambda_p = 0.0;
  std::string l1_target = "denoised";
  double threshold = 0.15;
  int dilation = 21;
  int steps = 1000;
  int respace_to = 400;
  bool print_config = false;
};

CFConfig cf_config(const CfOpts& o) {
  CFConfig c;
  c.tau = o.tau;
  c.tau_w = o.tau_w < 0 ? std::max(1, o.tau / 2) : o.tau_w;
  c.lambda_c = o.lambda_c;
  c.lambda_1 = o.lambda_1;
  c.lambda_p = o.lambda_p;
  c.l1_target = parse_l1_target(o.l1_target);
  c.mask_threshold = o.threshold;
  c.dilation = o.dilation;
  // Named methods: DiME backpropagates through the inner chain, the GMD
  // family through one denoiser call, FastDiME uses the denoised surrogate.
  static const std::map<std::string, std::tuple<GradientStrategy, Variant, bool>> kVariants = {
      {"dime", {GradientStrategy::kInnerChain, Variant::kSingle, false}},
      {"gmd", {GradientStrategy::kThroughDenoiser, Variant::kSingle, false}},
      {"fastdime", {GradientStrategy::kSurrogate, Variant::kSingle, true}},
      {"fastdime-nomask", {GradientStrategy::kSurrogate, Variant::kSingle, false}},
      {"fastdime-2", {GradientStrategy::kSurrogate, Variant::kTwoStep, false}},
      {"fastdime-2plus", {GradientStrategy::kSurrogate, Variant::kTwoStepPlus, true}},
  };
  const auto it = kVariants.find(o.variant);
  if (it == kVariants.end()) throw ConfigError("unknown variant '" + o.variant + "'");
  std::tie(c.strategy, c.variant, c.masking_enabled) = it->second;
  if (!o.strategy.empty()) c.strategy = parse_strategy(o.strategy);
  return c;
}

json cf_config_json(const CFConfig& c, const NoiseSchedule& s) {
  json j;
  j["tau"] = c.tau;
  j["tau_w"] = c.tau_w;
  j["schedule_steps"] = s.steps();
  j["tau_parent_timestep"] = s.respaced() ? s.parent_indices().at(c.tau - 1) : c.tau;
  j["lambda_c"] = c.lambda_c;
  j["lambda_1"] = c.lambda_1;
  j["lambda_p"] = c.lambda_p;
  j["l1_target"] = l1_target_name(c.l1_target);
  j["mask_threshold"] = c.mask_threshold;
  j["dilation"] = c.dilation;
  j["strategy"] = strategy_name(c.strategy);
  j["variant"] = variant_name(c.variant);
  j["masking_enabled"] = c.masking_enabled;
  const CallCounts calls = count_denoiser_calls(c, s);
  j["predicted_forward_calls"] = calls.forward;
  j["predicted_backward_calls"] = calls.backward;
  return j;
}

template <typename T>
std::unique_ptr<T> load_as(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string("--") + what + " is required");
  std::unique_ptr<Model> m = load_checkpoint(path);
  T* typed = dynamic_cast<T*>(m.get());
  if (typed == nullptr) {
    throw FormatError(path + " holds a " + std::string(model_kind_name(m->kind())) +
                      ", not a " + what);
  }
  m.release();
  return std::unique_ptr<T>(typed);
}

int cmd_gen_cf(const CfOpts& o, const Globals& g, const CLI::App& sub, const CLI::App& root,
               std::ostream& out) {
  const NoiseSchedule schedule = respace(make_linear_schedule(o.steps), o.respace_to);
  const CFConfig cfg = cf_config(o);
  cfg.validate(schedule.steps());
  if (o.print_config) {
    out << cf_config_json(cfg, schedule).dump(2) << "\n";
    return 0;
  }
  const fs::path dir = output_dir(g, root);
  const auto denoiser = load_as<DenoiserModel>(o.denoiser, "denoiser");
  const auto clf = load_as<ClassifierModel>(o.classifier, "classifier");
  if (denoiser->num_timesteps() != schedule.steps()) {
    throw ConfigError("denoiser was trained on " + std::to_string(denoiser->num_timesteps()) +
                      " steps but the schedule has " + std::to_string(schedule.steps()) +
                      "; pass a matching --respace");
  }
  std::vector<Tensor> inputs;
  if (!o.input.empty() == !o.data.empty()) throw ConfigError("give exactly one of --input or --data");
  if (!o.input.empty()) {
    inputs.push_back(read_pgm(o.input));
  } else {
    for (const LabeledSample& s : load_dataset(o.data)) {
      if (o.limit != 0 && inputs.size() >= o.limit) break;
      inputs.push_back(s.image);
    }
  }
  const Embedder embedder = [&](const Tensor& x) { return clf->features(x); };
  Report r = make_report("gen-cf", g, sub);
  r.details["cf_config"] = cf_config_json(cfg, schedule);
  json samples = json::array();
  const Rng root_rng(g.seed);
  std::vector<double> target_probs;
  double l1 = 0.0;
  CallCounts calls;
  char name[48];
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const std::size_t target = o.target >= 0 ? static_cast<std::size_t>(o.target)
                                             : 1 - std::min<std::size_t>(1, predicted_label(*clf, inputs[i]));
    Rng rng = root_rng.fork(i);
    const CFResult res = generate(inputs[i], target, *denoiser, *clf, schedule, cfg, rng,
                                  cfg.lambda_p > 0 ? &embedder : nullptr);
    std::snprintf(name, sizeof name, "%05zu_cf.pgm", i);
    write_pgm(res.counterfactual, dir / "cf" / name);
    std::snprintf(name, sizeof name, "%05zu_mask.pgm", i);
    write_pgm(res.mask.mask * 2.0f - 1.0f, dir / "cf" / name);
    const double d = l1_distance(inputs[i], res.counterfactual);
    l1 += d;
    calls += res.calls;
    target_probs.push_back(res.target_prob);
    samples.push_back({{"index", i}, {"target", target}, {"target_prob", res.target_prob},
                       {"success", res.success}, {"l1", d}, {"forward_calls", res.calls.forward},
                       {"backward_calls", res.calls.backward}});
  }
  r.rows.push_back({"all", "flip_ratio", flip_ratio(target_probs)});
  r.rows.push_back({"all", "mean_l1", l1 / static_cast<double>(inputs.size())});
  r.rows.push_back({"all", "forward_calls", static_cast<double>(calls.forward)});
  r.rows.push_back({"all", "backward_calls", static_cast<double>(calls.backward)});
  r.details["samples"] = samples;
  finish(r, dir, out);
  return 0;
}

struct ToyOpts {
  int runs = 100;
  int tau = 25;
  int steps = 100;
  double lambda_c = 3.0;
  std::string strategies = "surrogate,through-denoiser,inner-chain";
  bool no_guidance = false;
  bool trained = false;
  std::string start = "B";
};

int cmd_toy2d(const ToyOpts& o, const Globals& g, const CLI::App& sub, const CLI::App& root,
              std::ostream& out) {
  ToyBenchConfig c;
  c.runs = o.runs;
  c.tau = o.tau;
  c.schedule_steps = o.steps;
  c.lambda_c = o.lambda_c;
  c.guidance = !o.no_guidance;
  c.trained_denoiser = o.trained;
  c.seed = g.seed;
  c.strategies.clear();
  for (const std::string& s : split_list(o.strategies)) c.strategies.push_back(parse_strategy(s));
  if (o.start == "A") {
    c.start_component = 0;
  } else if (o.start == "B") {
    c.start_component = 1;
  } else if (o.start == "mixture") {
    c.start_component.reset();
  } else {
    throw ConfigError("--start must be A, B or mixture");
  }
  const fs::path dir = output_dir(g, root);
  const ToyBenchResult res = run_convergence_benchmark(c);
  write_file_atomic(dir / "toy2d_curves.csv", convergence_csv(res));
  emit_convergence_plot(res, dir / "toy2d_plot.svg");
  Report r = make_report("toy2d", g, sub);
  json curves = json::object();
  for (const ToyCurve& cv : res.curves) {
    const std::string name(strategy_name(cv.strategy));
    r.rows.push_back({name, "final_mean_distance", cv.mean_distance.back()});
    r.rows.push_back({name, "per_run_final_distance", cv.per_run_final_distance});
    r.rows.push_back({name, "flip_ratio", cv.flip_ratio});
    r.rows.push_back({name, "forward_calls", static_cast<double>(cv.calls.forward)});
    r.rows.push_back({name, "backward_calls", static_cast<double>(cv.calls.backward)});
    r.rows.push_back({name, "wall_seconds", cv.wall_seconds});
    curves[name] = {{"mean_distance", cv.mean_distance}, {"stderr", cv.standard_error}};
  }
  r.details["initial_distance"] = res.initial_distance.front();
  r.details["curves"] = curves;
  finish(r, dir, out);
  for (const ToyCurve& cv : res.curves) {
    out << strategy_name(cv.strategy) << ": final distance " << cv.mean_distance.back()
        << ", flip ratio " << cv.flip_ratio << ", forward calls " << cv.calls.forward << "\n";
  }
  return 0;
}

struct AuditOpts {
  std::string levels = "100,75,50";
  std::string seeds;
  std::size_t train_per_level = 600;
  std::size_t test_size = 400;
  std::size_t aux_per_cell = 250;
  int filter_y = -1;
  int tau = 30;
  int tau_w = -1;
  double lambda_c = 20.0;
  double lambda_1 = 0.0;
  double threshold = 0.15;
  int dilation = 5;
  std::string strategy = "surrogate";
  int denoiser_iterations = 450;
  int classifier_iterations = 600;
};

int cmd_shortcut_audit(const AuditOpts& o, const Globals& g, const CLI::App& sub,
                       const CLI::App& root, std::ostream& out) {
  ShortcutPipelineConfig c;
  c.levels = parse_list<int>(o.levels);
  c.train_per_level = o.train_per_level;
  c.test_size = o.test_size;
  c.aux_per_cell = o.aux_per_cell;
  if (o.filter_y >= 0) c.shortcut_train_y = o.filter_y;
  c.cf.tau = o.tau;
  c.cf.tau_w = o.tau_w < 0 ? std::max(1, o.tau / 2) : o.tau_w;
  c.cf.lambda_c = o.lambda_c;
  c.cf.lambda_1 = o.lambda_1;
  c.cf.mask_threshold = o.threshold;
  c.cf.dilation = o.dilation;
  c.cf.strategy = parse_strategy(o.strategy);
  c.denoiser_train.iterations = o.denoiser_iterations;
  c.task_train.iterations = o.classifier_iterations;
  const std::vector<std::uint64_t> seeds =
      o.seeds.empty() ? std::vector<std::uint64_t>{g.seed} : parse_list<std::uint64_t>(o.seeds);
  const fs::path dir = output_dir(g, root);
  const std::vector<DetectionRun> runs = run_detection(c, seeds);

  Report r = make_report("shortcut-audit", g, sub);
  const double n = static_cast<double>(runs.size());
  for (std::size_t li = 0; li < c.levels.size(); ++li) {
    ShortcutReport mean;
    for (const DetectionRun& run : runs) {
      const ShortcutReport& x = run.levels[li];
      mean.auroc_test_k += x.auroc_test_k / n;
      mean.auroc_test_u += x.auroc_test_u / n;
      mean.auroc_test_uc += x.auroc_test_uc / n;
      mean.mad += x.mad / n;
      mean.md_s1 += x.md_s1 / n;
      mean.md_s0 += x.md_s0 / n;
      mean.shortcut_flip_ratio += x.shortcut_flip_ratio / n;
      mean.mean_l1 += x.mean_l1 / n;
    }
    const std::string level = std::to_string(c.levels[li]);
    r.rows.push_back({level, "auroc_test_k", mean.auroc_test_k});
    r.rows.push_back({level, "auroc_test_u", mean.auroc_test_u});
    r.rows.push_back({level, "auroc_test_uc", mean.auroc_test_uc});
    r.rows.push_back({level, "mad", mean.mad});
    r.rows.push_back({level, "md_s1", mean.md_s1});
    r.rows.push_back({level, "md_s0", mean.md_s0});
    r.rows.push_back({level, "shortcut_flip_ratio", mean.shortcut_flip_ratio});
    r.rows.push_back({level, "mean_l1", mean.mean_l1});
    out << "k=" << level << "  MAD " << mean.mad << "  MD(s=1) " << mean.md_s1 << "  MD(s=0) "
        << mean.md_s0 << "  AUROC test_k " << mean.auroc_test_k << " test_u " << mean.auroc_test_u
        << " test_u^c " << mean.auroc_test_uc << "\n";
  }
  json per_seed = json::array();
  for (const DetectionRun& run : runs) {
    json levels = json::array();
    for (const ShortcutReport& x : run.levels) {
      levels.push_back({{"level", x.level}, {"auroc_test_k", x.auroc_test_k},
                        {"auroc_test_u", x.auroc_test_u}, {"auroc_test_uc", x.auroc_test_uc},
                        {"mad", x.mad}, {"md_s1", x.md_s1}, {"md_s0", x.md_s0},
                        {"shortcut_flip_ratio", x.shortcut_flip_ratio}, {"mean_l1", x.mean_l1},
                        {"cf_failures", x.cf_failures}});
    }
    per_seed.push_back({{"seed", run.seed}, {"shortcut_holdout_accuracy", run.shortcut_holdout_accuracy},
                        {"forward_calls", run.calls.forward}, {"seconds", run.seconds},
                        {"levels", levels}});
  }
  r.details["seeds"] = per_seed;
  finish(r, dir, out);
  return 0;
}

struct MetricOpts {
  std::string pairs, scores, images_a, images_b;
};

std::vector<Tensor> pgm_dir(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".pgm") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Tensor> out;
  for (const fs::path& f : files) out.push_back(read_pgm(f));
  if (out.empty()) throw IoError("no .pgm files in " + dir.string());
  return out;
}

int cmd_metrics(const MetricOpts& o, const Globals& g, const CLI::App& sub, const CLI::App& root,
                std::ostream& out) {
  if (o.pairs.empty() && o.scores.empty() && o.images_a.empty()) {
    throw ConfigError("nothing to compute: give --pairs, --scores or --images-a/--images-b");
  }
  const fs::path dir = output_dir(g, root);
  Report r = make_report("metrics", g, sub);
  if (!o.pairs.empty()) {
    const auto cols = read_csv_columns(o.pairs, 3);
    PairedConfidences p{cols[0], cols[1], {}};
    for (double s : cols[2]) p.shortcut.push_back(static_cast<int>(s));
    r.rows.push_back({"pairs", "mad", mad(p)});
    for (int group : {1, 0}) {
      try {
        r.rows.push_back({"pairs", "md_s" + std::to_string(group), md(p, group)});
      } catch (const ParameterError&) {
        // group absent: the metric is undefined and simply not reported
      }
    }
    r.rows.push_back({"pairs", "flip_ratio", flip_ratio(p)});
  }
  if (!o.scores.empty()) {
    const auto cols = read_csv_columns(o.scores, 2);
    std::vector<int> labels;
    for (double l : cols[1]) labels.push_back(static_cast<int>(l));
    r.rows.push_back({"scores", "auroc", auroc(cols[0], labels)});
  }
  if (!o.images_a.empty()) {
    if (o.images_b.empty()) throw ConfigError("--images-a needs --images-b");
    const auto a = pgm_dir(o.images_a), b = pgm_dir(o.images_b);
    if (a.size() != b.size()) throw ParameterError("image directories differ in size");
    double l1 = 0.0;
    std::vector<std::vector<double>> fa, fb;
    for (std::size_t i = 0; i < a.size(); ++i) {
      l1 += l1_distance(a[i], b[i]);
      fa.emplace_back(a[i].data().begin(), a[i].data().end());
      fb.emplace_back(b[i].data().begin(), b[i].data().end());
    }
    r.rows.push_back({"images", "mean_l1", l1 / static_cast<double>(a.size())});
    if (a.size() >= 2) r.rows.push_back({"images", "frechet_pixels", frechet_gaussian_distance(fa, fb)});
  }
  for (const ReportRow& row : r.rows) out << row.level << " " << row.metric << " " << row.value << "\n";
  finish(r, dir, out);
  return 0;
}

// Splices `key = value` entries of --config into the argument list as
// --key=value, unless the key was given explicitly.
std::vector<std::string> apply_config_file(std::vector<std::string> args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  for (const auto& [key, value] : load_config(path)) {
    const std::string flag = "--" + key;
    bool given = false;
    for (const std::string& a : args) {
      if (a == flag || a.rfind(flag + "=", 0) == 0) given = true;
    }
    if (!given) args.push_back(flag + "=" + value);
  }
  return args;
}

}  // namespace

int run_cli(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Diffusion counterfactuals and shortcut audits", "fastcf"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random stream");
  app.add_option("--out", g.out, "Output directory (FCF_OUT replaces the default)");
  app.add_option("--config", g.config, "Flat key = value file with option defaults");
  app.fallthrough();

  GenDataOpts gd;
  CLI::App* gen_data = app.add_subcommand("gen-data", "Write a synthetic shortcut dataset");
  gen_data->add_option("--per-cell", gd.per_cell, "Samples per (y, s) cell");
  gen_data->add_option("--level", gd.level, "Curate a D_k set at this correlation level");
  gen_data->add_option("--count", gd.count, "Size of the curated set");
  gen_data->add_option("--noise", gd.noise, "Pixel noise sigma");

  TrainOpts td;
  CLI::App* train_den = app.add_subcommand("train-denoiser", "Train an epsilon-prediction model");
  train_den->add_option("--data", td.data, "Dataset directory");
  train_den->add_flag("--toy", td.toy, "Train on the 2D toy mixture");
  train_den->add_option("--steps", td.steps, "Diffusion steps");
  train_den->add_option("--respace", td.respace_to, "Respaced step count");
  train_den->add_option("--iterations", td.iterations);
  train_den->add_option("--batch", td.batch);
  train_den->add_option("--lr", td.lr);
  train_den->add_option("--momentum", td.momentum);
  train_den->add_option("--clip", td.clip);
  train_den->add_option("--channels", td.channels);
  train_den->add_option("--max-timestep", td.max_timestep, "Train on t <= this (0 = all)");

  TrainOpts tc;
  tc.iterations = 600;
  tc.batch = 32;
  tc.lr = 0.05;
  tc.clip = 0.0;
  tc.max_timestep = 0;
  CLI::App* train_clf = app.add_subcommand("train-classifier", "Train a classifier");
  train_clf->add_option("--data", tc.data, "Dataset directory");
  train_clf->add_flag("--toy", tc.toy, "Train on the 2D toy mixture");
  train_clf->add_option("--label", tc.label, "Which label to learn: y or s");
  train_clf->add_option("--filter-y", tc.filter_y, "Only train on samples with this y");
  train_clf->add_option("--iterations", tc.iterations);
  train_clf->add_option("--batch", tc.batch);
  train_clf->add_option("--lr", tc.lr);
  train_clf->add_option("--momentum", tc.momentum);
  train_clf->add_option("--clip", tc.clip);

  CfOpts co;
  CLI::App* gen_cf = app.add_subcommand("gen-cf", "Generate counterfactuals");
  gen_cf->add_option("--denoiser", co.denoiser, "Denoiser checkpoint");
  gen_cf->add_option("--classifier", co.classifier, "Guidance classifier checkpoint");
  gen_cf->add_option("--input", co.input, "Single PGM image");
  gen_cf->add_option("--data", co.data, "Dataset directory");
  gen_cf->add_option("--limit", co.limit, "At most this many dataset images (0 = all)");
  gen_cf->add_option("--target", co.target, "Target class (default: flip the prediction)");
  gen_cf->add_option("--variant", co.variant,
                     "dime, gmd, fastdime, fastdime-nomask, fastdime-2 or fastdime-2plus");
  gen_cf->add_option("--strategy", co.strategy, "Override: inner-chain, through-denoiser, surrogate");
  gen_cf->add_option("--tau", co.tau);
  gen_cf->add_option("--tau-w", co.tau_w, "Mask warm-up level (default tau/2)");
  gen_cf->add_option("--lambda-c", co.lambda_c);
  gen_cf->add_option("--lambda-1", co.lambda_1);
  gen_cf->add_option("--lambda-p", co.lambda_p);
  gen_cf->add_option("--l1-target", co.l1_target, "noisy or denoised");
  gen_cf->add_option("--threshold", co.threshold, "Mask threshold");
  gen_cf->add_option("--dilation", co.dilation, "Mask dilation width (odd)");
  gen_cf->add_option("--steps", co.steps, "Diffusion steps");
  gen_cf->add_option("--respace", co.respace_to, "Respaced step count");
  gen_cf->add_flag("--print-config", co.print_config, "Print the resolved settings and exit");

  ToyOpts to;
  CLI::App* toy = app.add_subcommand("toy2d", "2D convergence benchmark");
  toy->add_option("--runs", to.runs);
  toy->add_option("--tau", to.tau);
  toy->add_option("--steps", to.steps, "Diffusion steps");
  toy->add_option("--lambda-c", to.lambda_c);
  toy->add_option("--strategies", to.strategies, "Comma-separated strategies");
  toy->add_flag("--no-guidance", to.no_guidance);
  toy->add_flag("--trained", to.trained, "Use a trained MLP instead of the closed form");
  toy->add_option("--start", to.start, "Start class: A, B or mixture");

  AuditOpts ao;
  CLI::App* audit = app.add_subcommand("shortcut-audit", "Shortcut-learning detection pipeline");
  audit->add_option("--levels", ao.levels, "Comma-separated correlation levels");
  audit->add_option("--seeds", ao.seeds, "Comma-separated pipeline seeds (default --seed)");
  audit->add_option("--train-per-level", ao.train_per_level);
  audit->add_option("--test-size", ao.test_size);
  audit->add_option("--aux-per-cell", ao.aux_per_cell);
  audit->add_option("--filter-y", ao.filter_y, "Shortcut classifier trains on this y only");
  audit->add_option("--tau", ao.tau);
  audit->add_option("--tau-w", ao.tau_w);
  audit->add_option("--lambda-c", ao.lambda_c);
  audit->add_option("--lambda-1", ao.lambda_1);
  audit->add_option("--threshold", ao.threshold);
  audit->add_option("--dilation", ao.dilation);
  audit->add_option("--strategy", ao.strategy);
  audit->add_option("--denoiser-iterations", ao.denoiser_iterations);
  audit->add_option("--classifier-iterations", ao.classifier_iterations);

  MetricOpts mo;
  CLI::App* metrics = app.add_subcommand("metrics", "Evaluate stored confidences or images");
  metrics->add_option("--pairs", mo.pairs, "CSV: original,counterfactual,shortcut");
  metrics->add_option("--scores", mo.scores, "CSV: score,label");
  metrics->add_option("--images-a", mo.images_a, "Directory of originals");
  metrics->add_option("--images-b", mo.images_b, "Directory of counterfactuals");

  try {
    std::vector<std::string> args = apply_config_file(raw_args);
    std::reverse(args.begin(), args.end());  // CLI11 consumes from the back
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  } catch (const Error& e) {
    err << "error: " << e.kind() << ": " << e.what() << "\n";
    return 2;
  }

  try {
    if (gen_data->parsed()) return cmd_gen_data(gd, g, *gen_data, app, out);
    if (train_den->parsed()) return cmd_train_denoiser(td, g, *train_den, app, out);
    if (train_clf->parsed()) return cmd_train_classifier(tc, g, *train_clf, app, out);
    if (gen_cf->parsed()) return cmd_gen_cf(co, g, *gen_cf, app, out);
    if (toy->parsed()) return cmd_toy2d(to, g, *toy, app, out);
    if (audit->parsed()) return cmd_shortcut_audit(ao, g, *audit, app, out);
    if (metrics->parsed()) return cmd_metrics(mo, g, *metrics, app, out);
  } catch (const Error& e) {
    err << "error: " << e.kind() << ": " << e.what() << "\n";
    return 1;
  } catch (const fs::filesystem_error& e) {
    err << "error: io: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: internal: " << e.what() << "\n";
    return 1;
  }
  err << "error: usage: no subcommand\n";
  return 2;
}

}  // namespace fastcf
