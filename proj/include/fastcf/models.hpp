// Copyright 2026 The fastcf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "fastcf/schedule.hpp"
#include "fastcf/tensor.hpp"

namespace fastcf {

class Rng;

enum class ModelKind : std::uint32_t {
  kMlpDenoiser = 1,
  kConvDenoiser = 2,
  kMlpClassifier = 3,
  kConvClassifier = 4,
};

std::string_view model_kind_name(ModelKind kind);

/// Anything with trainable, serializable parameters.
class Model {
 public:
  virtual ~Model() = default;
  virtual ModelKind kind() const = 0;
  virtual const Shape& input_shape() const = 0;
  /// Handles to the parameter leaves, in a fixed order. Parameters are
  /// frozen (requires_grad off) except while a training loop runs.
  virtual std::vector<Tensor> parameters() const = 0;
};

/// epsilon-prediction network evaluated at a (1-based) timestep.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  /// Output has x_t's shape; recorded on the tape when x_t requires grad.
  virtual Tensor predict_noise(const Tensor& x_t, int t) const = 0;
  virtual int num_timesteps() const = 0;
};

class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual Tensor logits(const Tensor& x) const = 0;
  /// Penultimate activations, used as the default perceptual embedder.
  virtual Tensor features(const Tensor& x) const = 0;
  virtual std::size_t num_classes() const = 0;
  virtual const Shape& classifier_input_shape() const = 0;
};

class DenoiserModel : public Model, public NoisePredictor {};
class ClassifierModel : public Model, public Classifier {
 public:
  const Shape& classifier_input_shape() const override { return input_shape(); }
};

/// MLP denoiser for flat inputs; a learned vector per timestep is added to
/// the first hidden pre-activation.
class MlpDenoiser final : public DenoiserModel {
 public:
  MlpDenoiser(Shape input_shape, std::vector<std::size_t> hidden, int timesteps, Rng& rng);
  MlpDenoiser(Shape input_shape, std::vector<Tensor> parameters);

  ModelKind kind() const override { return ModelKind::kMlpDenoiser; }
  const Shape& input_shape() const override { return input_shape_; }
  std::vector<Tensor> parameters() const override;
  Tensor predict_noise(const Tensor& x_t, int t) const override;
  int num_timesteps() const override;

 private:
  Shape input_shape_;
  Tensor embedding_;  // [T x hidden0]
  std::vector<Tensor> weights_;
  std::vector<Tensor> biases_;
};

/// Three 3x3 "same" convolutions g(x_t, t); the per-timestep vector is a
/// channel bias on the first hidden layer. The output is a_t x_t + b_t g with
/// learned per-timestep scalars starting at (0, 1).
class ConvDenoiser final : public DenoiserModel {
 public:
  ConvDenoiser(Shape input_shape, std::size_t channels, int timesteps, Rng& rng);
  ConvDenoiser(Shape input_shape, std::vector<Tensor> parameters);

  ModelKind kind() const override { return ModelKind::kConvDenoiser; }
  const Shape& input_shape() const override { return input_shape_; }
  std::vector<Tensor> parameters() const override;
  Tensor predict_noise(const Tensor& x_t, int t) const override;
  int num_timesteps() const override;

 private:
  Shape input_shape_;
  Tensor embedding_;  // [T x channels]
  std::vector<Tensor> kernels_;
  std::vector<Tensor> biases_;
  Tensor output_mix_;  // [T x 2]
};

/// SiLU MLP classifier. With no hidden layers it is multinomial logistic
/// regression.
class MlpClassifier final : public ClassifierModel {
 public:
  MlpClassifier(Shape input_shape, std::vector<std::size_t> hidden, std::size_t classes, Rng& rng);
  MlpClassifier(Shape input_shape, std::vector<Tensor> parameters);

  ModelKind kind() const override { return ModelKind::kMlpClassifier; }
  const Shape& input_shape() const override { return input_shape_; }
  std::vector<Tensor> parameters() const override;
  Tensor logits(const Tensor& x) const override;
  Tensor features(const Tensor& x) const override;
  std::size_t num_classes() const override;

 private:
  Tensor hidden_forward(const Tensor& x) const;

  Shape input_shape_;
  std::vector<Tensor> weights_;
  std::vector<Tensor> biases_;
};

/// Two stride-2 convolutions (16 channels each) followed by a dense layer
/// that starts at zero.
class ConvClassifier final : public ClassifierModel {
 public:
  ConvClassifier(Shape input_shape, std::size_t classes, Rng& rng);
  ConvClassifier(Shape input_shape, std::vector<Tensor> parameters);

  ModelKind kind() const override { return ModelKind::kConvClassifier; }
  const Shape& input_shape() const override { return input_shape_; }
  std::vector<Tensor> parameters() const override;
  Tensor logits(const Tensor& x) const override;
  Tensor features(const Tensor& x) const override;
  std::size_t num_classes() const override;

 private:
  Shape input_shape_;
  std::vector<Tensor> kernels_;
  std::vector<Tensor> conv_biases_;
  Tensor dense_;
  Tensor dense_bias_;
};

/// Rebuilds a model of the given kind from its parameter list.
std::unique_ptr<Model> make_model(ModelKind kind, Shape input_shape, std::vector<Tensor> parameters);

/// Softmax probabilities of `x` under `m`.
std::vector<double> classify(const Classifier& m, const Tensor& x);
std::size_t predicted_label(const Classifier& m, const Tensor& x);

/// d/dx of -log p(target | x).
Tensor input_gradient(const Classifier& m, const Tensor& x, std::size_t target);

/// -log p(target | x) as a differentiable scalar.
Tensor cross_entropy(const Classifier& m, const Tensor& x, std::size_t target);

/// Isotropic Gaussian mixture.
struct GmmPrior {
  std::vector<double> weights;
  std::vector<std::vector<double>> means;
  std::vector<double> variances;

  std::size_t components() const { return weights.size(); }
  std::size_t dim() const { return means.empty() ? 0 : means.front().size(); }
  /// Throws ParameterError unless weights are a distribution and variances positive.
  void validate() const;
  /// Draws x_0 from component `component`, or from the mixture when absent.
  std::vector<double> sample(Rng& rng, std::optional<std::size_t> component = {}) const;
};

struct PosteriorMean {
  std::vector<double> mean;
  std::vector<double> responsibilities;
  bool fallback = false;  // all likelihoods underflowed; nearest component used
};

/// MSE-optimal denoiser of a Gaussian mixture: E[x_0 | x_t] in closed form,
/// exposed as an epsilon predictor with an analytic input Jacobian.
class GmmPosteriorDenoiser final : public NoisePredictor {
 public:
  GmmPosteriorDenoiser(GmmPrior prior, NoiseSchedule schedule);

  PosteriorMean posterior_mean(std::span<const float> x_t, int t) const;
  Tensor predict_noise(const Tensor& x_t, int t) const override;
  int num_timesteps() const override { return schedule_.steps(); }

  const GmmPrior& prior() const { return prior_; }
  const NoiseSchedule& schedule() const { return schedule_; }

 private:
  GmmPrior prior_;
  NoiseSchedule schedule_;
};

struct TrainConfig {
  int iterations = 2000;
  int batch_size = 32;
  double learning_rate = 0.01;
  double momentum = 0.9;
  /// Global gradient-norm clip; 0 disables.
  double clip_norm = 0.0;
  /// MLP widths (denoiser default 128,128; classifier default 32).
  std::vector<std::size_t> hidden;
  /// Hidden channels of the conv denoiser.
  std::size_t channels = 32;
  /// Denoiser training draws t from [1, max_timestep]; 0 means all steps.
  int max_timestep = 0;
  /// Classifier training adds N(0, input_noise^2) to every input; 0 disables.
  double input_noise = 0.0;
};

struct DenoiserTraining {
  std::unique_ptr<DenoiserModel> model;
  std::vector<double> losses;  // per-iteration mean batch loss
};

struct ClassifierTraining {
  std::unique_ptr<ClassifierModel> model;
  std::vector<double> losses;
};

/// Mini-batch SGD with momentum on mean ||eps - eps_theta(x_t, t)||^2.
/// Rank-1 samples get an MlpDenoiser, rank-3 samples a ConvDenoiser.
DenoiserTraining train_denoiser(std::span<const Tensor> data, const NoiseSchedule& schedule,
                                const TrainConfig& config, std::uint64_t seed);

/// Same loop with the cross-entropy objective. Rank-1 inputs get an
/// MlpClassifier, rank-3 inputs a ConvClassifier.
ClassifierTraining train_classifier(std::span<const Tensor> inputs, std::span<const int> labels,
                                    std::size_t classes, const TrainConfig& config,
                                    std::uint64_t seed);

}  // namespace fastcf
