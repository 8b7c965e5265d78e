// Copyright 2026 The fastcf Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <sstream>

#include "fastcf/diffusion.hpp"
#include "fastcf/errors.hpp"
#include "fastcf/models.hpp"
#include "fastcf/ops.hpp"
#include "fastcf/rng.hpp"

namespace fastcf {
namespace {

class MomentumSgd {
 public:
  MomentumSgd(std::vector<Tensor> params, const TrainConfig& config)
      : params_(std::move(params)), config_(config) {
    for (Tensor& p : params_) {
      p.set_requires_grad(true);
      velocity_.emplace_back(p.numel(), 0.0);
    }
  }

  ~MomentumSgd() {
    for (Tensor& p : params_) {
      p.zero_grad();
      p.set_requires_grad(false);
    }
  }

  void zero_grad() { zero_grads(params_); }

  // Grads hold a sum over the batch; `scale` turns it into a mean.
  void step(double scale) {
    double norm2 = 0;
    for (const Tensor& p : params_) {
      if (!p.has_grad()) continue;
      for (float g : p.grad()) norm2 += double(g) * g * scale * scale;
    }
    if (config_.clip_norm > 0 && norm2 > config_.clip_norm * config_.clip_norm) {
      scale *= config_.clip_norm / std::sqrt(norm2);
    }
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Tensor& p = params_[k];
      if (!p.has_grad()) continue;
      auto g = p.grad();
      auto w = p.mutable_data();
      auto& v = velocity_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        v[i] = config_.momentum * v[i] + g[i] * scale;
        w[i] = static_cast<float>(w[i] - config_.learning_rate * v[i]);
      }
    }
  }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> velocity_;
  const TrainConfig& config_;
};

void check_finite(double loss, int iteration, const std::vector<double>& trace) {
  if (std::isfinite(loss)) return;
  std::ostringstream os;
  os << "non-finite training loss at iteration " << iteration << "; recent losses:";
  const std::size_t from = trace.size() > 5 ? trace.size() - 5 : 0;
  for (std::size_t i = from; i < trace.size(); ++i) os << ' ' << trace[i];
  throw NumericError(os.str());
}

void check_config(const TrainConfig& config) {
  if (config.iterations < 1 || config.batch_size < 1) {
    throw ParameterError("training needs positive iterations and batch size");
  }
  if (!(config.learning_rate > 0)) throw ParameterError("learning rate must be positive");
  if (config.max_timestep < 0) throw ParameterError("max_timestep must be >= 0");
  if (!(config.input_noise >= 0)) throw ParameterError("input_noise must be >= 0");
}

const Shape& common_shape(std::span<const Tensor> data) {
  if (data.empty()) throw ParameterError("training data is empty");
  const Shape& shape = data.front().shape();
  for (const Tensor& x : data) {
    if (x.shape() != shape) {
      throw ShapeError("training samples differ in shape: " + shape_string(shape) + " vs " +
                       shape_string(x.shape()));
    }
  }
  return shape;
}

}  // namespace

DenoiserTraining train_denoiser(std::span<const Tensor> data, const NoiseSchedule& schedule,
                                const TrainConfig& config, std::uint64_t seed) {
  check_config(config);
  const Shape& shape = common_shape(data);
  Rng root(seed);
  Rng init = root.fork(1);
  Rng rng = root.fork(2);

  DenoiserTraining out;
  if (shape.size() == 3) {
    out.model = std::make_unique<ConvDenoiser>(shape, config.channels, schedule.steps(), init);
  } else {
    const auto hidden = config.hidden.empty() ? std::vector<std::size_t>{128, 128} : config.hidden;
    out.model = std::make_unique<MlpDenoiser>(shape, hidden, schedule.steps(), init);
  }
  {
    MomentumSgd sgd(out.model->parameters(), config);
    const int n = static_cast<int>(data.size());
    const int t_max = config.max_timestep > 0 ? std::min(config.max_timestep, schedule.steps())
                                              : schedule.steps();
    for (int it = 0; it < config.iterations; ++it) {
      sgd.zero_grad();
      double total = 0;
      for (int b = 0; b < config.batch_size; ++b) {
        const Tensor& x0 = data[rng.uniform_int(0, n - 1)];
        const int t = rng.uniform_int(1, t_max);
        const Tensor eps = Tensor::randn(shape, rng);
        const Tensor x_t = forward_sample(schedule, x0, t, eps);
        const Tensor loss = mean(square(out.model->predict_noise(x_t, t) - eps));
        backward(loss);
        total += loss.item();
      }
      const double batch_loss = total / config.batch_size;
      check_finite(batch_loss, it, out.losses);
      out.losses.push_back(batch_loss);
      sgd.step(1.0 / config.batch_size);
    }
  }
  return out;
}

ClassifierTraining train_classifier(std::span<const Tensor> inputs, std::span<const int> labels,
                                    std::size_t classes, const TrainConfig& config,
                                    std::uint64_t seed) {
  check_config(config);
  const Shape& shape = common_shape(inputs);
  if (labels.size() != inputs.size()) throw ParameterError("inputs and labels differ in length");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw IndexError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
  Rng root(seed);
  Rng init = root.fork(1);
  Rng rng = root.fork(2);

  ClassifierTraining out;
  if (shape.size() == 3) {
    out.model = std::make_unique<ConvClassifier>(shape, classes, init);
  } else {
    const auto hidden = config.hidden.empty() ? std::vector<std::size_t>{32} : config.hidden;
    out.model = std::make_unique<MlpClassifier>(shape, hidden, classes, init);
  }
  {
    MomentumSgd sgd(out.model->parameters(), config);
    const int n = static_cast<int>(inputs.size());
    for (int it = 0; it < config.iterations; ++it) {
      sgd.zero_grad();
      double total = 0;
      for (int b = 0; b < config.batch_size; ++b) {
        const int i = rng.uniform_int(0, n - 1);
        const Tensor x = config.input_noise > 0
                             ? inputs[i] + Tensor::randn(inputs[i].shape(), rng) *
                                               static_cast<float>(config.input_noise)
                             : inputs[i];
        const Tensor loss = cross_entropy(*out.model, x, static_cast<std::size_t>(labels[i]));
        backward(loss);
        total += loss.item();
      }
      const double batch_loss = total / config.batch_size;
      check_finite(batch_loss, it, out.losses);
      out.losses.push_back(batch_loss);
      sgd.step(1.0 / config.batch_size);
    }
  }
  return out;
}

}  // namespace fastcf
