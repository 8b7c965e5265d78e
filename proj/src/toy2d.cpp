// Copyright 2026 The fastcf Authors
// SPDX-License-Identifier: Apache-2.0

#include "fastcf/toy2d.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "fastcf/diffusion.hpp"
#include "fastcf/errors.hpp"
#include "fastcf/io.hpp"
#include "fastcf/rng.hpp"

namespace fastcf {

GmmPrior default_toy_prior() {
  return {{0.5, 0.5}, {{-2.0, 0.0}, {2.0, 0.0}}, {0.25, 0.25}};
}

void ToyBenchConfig::validate() const {
  prior.validate();
  if (prior.components() != 2 || prior.dim() != 2) {
    throw ConfigError("toy benchmark needs a 2-component 2D prior");
  }
  if (runs < 1) throw ConfigError("runs must be >= 1");
  if (schedule_steps < 2) throw ConfigError("schedule needs >= 2 steps");
  if (tau < 1 || tau > schedule_steps) throw ConfigError("tau outside the schedule");
  if (strategies.empty()) throw ConfigError("no strategies to compare");
  const double sep = std::hypot(prior.means[0][0] - prior.means[1][0],
                                prior.means[0][1] - prior.means[1][1]);
  const double sigma = std::sqrt(std::max(prior.variances[0], prior.variances[1]));
  if (!(sep > 3.0 * sigma)) throw ConfigError("class means closer than 3 standard deviations");
  if (start_component && *start_component >= 2) throw ConfigError("start component must be 0 or 1");
}

MlpClassifier bayes_classifier(const GmmPrior& prior) {
  prior.validate();
  if (prior.components() != 2 || prior.variances[0] != prior.variances[1]) {
    throw ParameterError("bayes_classifier needs two components with equal variances");
  }
  const std::size_t d = prior.dim();
  const double v = prior.variances[0];
  // log w_i + log N(x; mu_i, v I) up to a shared term is linear in x.
  std::vector<float> w(2 * d), b(2);
  for (std::size_t i = 0; i < 2; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      w[i * d + j] = static_cast<float>(prior.means[i][j] / v);
      sq += prior.means[i][j] * prior.means[i][j];
    }
    b[i] = static_cast<float>(std::log(prior.weights[i]) - sq / (2.0 * v));
  }
  return MlpClassifier({d}, {Tensor({2, d}, std::move(w)), Tensor({2}, std::move(b))});
}

namespace {

struct Accum {
  std::vector<double> sx, sy, sxx, syy;
  explicit Accum(std::size_t n) : sx(n), sy(n), sxx(n), syy(n) {}
  void add(std::size_t k, double x, double y) {
    sx[k] += x;
    sy[k] += y;
    sxx[k] += x * x;
    syy[k] += y * y;
  }
};

}  // namespace

ToyBenchResult run_convergence_benchmark(const ToyBenchConfig& config) {
  config.validate();
  const NoiseSchedule schedule = make_linear_schedule(config.schedule_steps);
  const GmmPosteriorDenoiser analytic(config.prior, schedule);
  std::unique_ptr<DenoiserModel> trained;
  if (config.trained_denoiser) {
    Rng data_rng = Rng(config.seed).fork(7);
    std::vector<Tensor> data;
    for (int i = 0; i < 4000; ++i) {
      const std::vector<double> p = config.prior.sample(data_rng);
      data.emplace_back(Shape{2}, std::vector<float>{static_cast<float>(p[0]),
                                                     static_cast<float>(p[1])});
    }
    trained = train_denoiser(data, schedule, config.train, mix_seed(config.seed, 8)).model;
  }
  const NoisePredictor& model = trained ? static_cast<const NoisePredictor&>(*trained)
                                        : static_cast<const NoisePredictor&>(analytic);
  const MlpClassifier clf = bayes_classifier(config.prior);
  const std::vector<double>& mu_a = config.prior.means[0];

  CFConfig cf;
  cf.tau = config.tau;
  cf.tau_w = 1;
  cf.lambda_c = config.guidance ? config.lambda_c : 0.0;
  cf.masking_enabled = false;
  cf.record_denoised = true;

  ToyBenchResult result;
  const auto n = static_cast<double>(config.runs);
  const std::size_t points = static_cast<std::size_t>(config.tau) + 1;
  for (GradientStrategy strategy : config.strategies) {
    cf.strategy = strategy;
    ToyCurve curve;
    curve.strategy = strategy;
    Accum acc(points);
    double start_x = 0.0, start_y = 0.0;
    const auto t0 = std::chrono::steady_clock::now();
    for (int run = 0; run < config.runs; ++run) {
      // Common random numbers: every strategy sees the same starts and noise.
      Rng rng = Rng(config.seed).fork(static_cast<std::uint64_t>(run));
      const std::vector<double> s = config.prior.sample(rng, config.start_component);
      start_x += s[0];
      start_y += s[1];
      const Tensor x0({2}, {static_cast<float>(s[0]), static_cast<float>(s[1])});
      const CFResult r = generate_counterfactual(x0, 0, model, clf, schedule, cf, rng);
      for (std::size_t k = 0; k < r.trace.size(); ++k) {
        acc.add(k, r.trace[k].denoised[0], r.trace[k].denoised[1]);
      }
      const auto fin = r.counterfactual.data();
      acc.add(points - 1, fin[0], fin[1]);
      curve.finals.push_back({fin[0], fin[1]});
      curve.per_run_final_distance += std::hypot(fin[0] - mu_a[0], fin[1] - mu_a[1]) / n;
      if (r.success) curve.flip_ratio += 1.0 / n;
      curve.calls += r.calls;
    }
    curve.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (std::size_t k = 0; k < points; ++k) {
      const double mx = acc.sx[k] / n, my = acc.sy[k] / n;
      curve.mean_distance.push_back(std::hypot(mx - mu_a[0], my - mu_a[1]));
      const double var = (acc.sxx[k] / n - mx * mx) + (acc.syy[k] / n - my * my);
      curve.standard_error.push_back(std::sqrt(std::max(0.0, var) / n));
    }
    if (result.initial_distance.empty()) {
      result.initial_distance.push_back(std::hypot(start_x / n - mu_a[0], start_y / n - mu_a[1]));
    }
    result.curves.push_back(std::move(curve));
  }
  return result;
}

std::string convergence_csv(const ToyBenchResult& result) {
  std::string out = "step,strategy,mean_distance,stderr\n";
  char buf[128];
  for (const ToyCurve& c : result.curves) {
    for (std::size_t k = 0; k < c.mean_distance.size(); ++k) {
      std::snprintf(buf, sizeof buf, "%zu,%s,%.17g,%.17g\n", k,
                    std::string(strategy_name(c.strategy)).c_str(), c.mean_distance[k],
                    c.standard_error[k]);
      out += buf;
    }
  }
  return out;
}

std::string convergence_svg(const ToyBenchResult& result) {
  if (result.curves.empty()) throw ParameterError("no curves to plot");
  constexpr double kW = 640, kH = 400, kLeft = 60, kRight = 160, kTop = 20, kBottom = 50;
  static const char* kColors[] = {"#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e"};
  std::size_t len = 0;
  double ymax = 0.0;
  for (const ToyCurve& c : result.curves) {
    len = std::max(len, c.mean_distance.size());
    for (double v : c.mean_distance) ymax = std::max(ymax, v);
  }
  if (ymax <= 0.0) ymax = 1.0;
  const double xspan = len > 1 ? static_cast<double>(len - 1) : 1.0;
  auto px = [&](double k) { return kLeft + k / xspan * (kW - kLeft - kRight); };
  auto py = [&](double v) { return kTop + (1.0 - v / ymax) * (kH - kTop - kBottom); };

  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(2);
  s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
    << "\" viewBox=\"0 0 " << kW << " " << kH << "\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<line x1=\"" << kLeft << "\" y1=\"" << py(0) << "\" x2=\"" << px(xspan) << "\" y2=\""
    << py(0) << "\" stroke=\"black\"/>\n"
    << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << py(0)
    << "\" stroke=\"black\"/>\n"
    << "<text x=\"" << px(xspan / 2) << "\" y=\"" << kH - 12
    << "\" text-anchor=\"middle\" font-size=\"14\">step</text>\n"
    << "<text x=\"16\" y=\"" << py(ymax / 2) << "\" text-anchor=\"middle\" font-size=\"14\" "
    << "transform=\"rotate(-90 16 " << py(ymax / 2) << ")\">distance to A</text>\n"
    << "<text x=\"" << kLeft - 6 << "\" y=\"" << py(ymax) + 4
    << "\" text-anchor=\"end\" font-size=\"11\">" << ymax << "</text>\n"
    << "<text x=\"" << kLeft - 6 << "\" y=\"" << py(0) + 4
    << "\" text-anchor=\"end\" font-size=\"11\">0</text>\n";
  for (std::size_t i = 0; i < result.curves.size(); ++i) {
    const ToyCurve& c = result.curves[i];
    const char* color = kColors[i % std::size(kColors)];
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t k = 0; k < c.mean_distance.size(); ++k) {
      s << (k ? " " : "") << px(static_cast<double>(k)) << "," << py(c.mean_distance[k]);
    }
    s << "\"/>\n";
    const double ly = kTop + 20.0 * static_cast<double>(i + 1);
    s << "<rect x=\"" << kW - kRight + 15 << "\" y=\"" << ly - 8 << "\" width=\"18\" height=\"4\" "
      << "fill=\"" << color << "\"/>\n"
      << "<text x=\"" << kW - kRight + 40 << "\" y=\"" << ly << "\" font-size=\"12\">"
      << strategy_name(c.strategy) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

void emit_convergence_plot(const ToyBenchResult& result, const std::filesystem::path& path) {
  write_file_atomic(path, convergence_svg(result));
}

}  // namespace fastcf
