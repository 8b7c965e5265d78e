// Copyright 2026 The fastcf Authors
// SPDX-License-Identifier: Apache-2.0

#include "fastcf/models.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fastcf/errors.hpp"
#include "fastcf/ops.hpp"
#include "fastcf/rng.hpp"

namespace fastcf {
namespace {

// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual default for dense and conv layers.
Tensor uniform_init(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<float> v(shape_numel(shape));
  for (float& x : v) x = static_cast<float>((2.0 * rng.uniform() - 1.0) * bound);
  return Tensor(std::move(shape), std::move(v));
}

Tensor zeros_param(Shape shape) {
  return Tensor::zeros(std::move(shape));
}

// Parameters are frozen leaves; training switches requires_grad on for its
// duration so inference never writes into shared parameter grads.
Tensor as_param(const Tensor& t) {
  Tensor p = t.is_leaf() ? t : t.detach();
  p.set_requires_grad(false);
  return p;
}

void expect_shape(const Tensor& t, const Shape& shape, std::string_view what) {
  if (t.shape() != shape) {
    throw ShapeError(std::string(what) + ": expected " + shape_string(shape) + ", got " +
                     shape_string(t.shape()));
  }
}

void check_input(const Tensor& x, const Shape& expected, std::string_view model) {
  if (x.shape() != expected) {
    throw ShapeError(std::string(model) + " expects input " + shape_string(expected) + ", got " +
                     shape_string(x.shape()));
  }
}

Tensor dense(const Tensor& w, const Tensor& x, const Tensor& b) {
  const std::size_t in = w.shape()[1], out = w.shape()[0];
  return reshape(matmul(w, reshape(x, {in, 1})), {out}) + b;
}

std::size_t conv_out(std::size_t n) { return (n + 2 - 3) / 2 + 1; }

}  // namespace

std::string_view model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::kMlpDenoiser: return "mlp-denoiser";
    case ModelKind::kConvDenoiser: return "conv-denoiser";
    case ModelKind::kMlpClassifier: return "mlp-classifier";
    case ModelKind::kConvClassifier: return "conv-classifier";
  }
  return "unknown";
}

// ---------------------------------------------------------------- MlpDenoiser

MlpDenoiser::MlpDenoiser(Shape input_shape, std::vector<std::size_t> hidden, int timesteps,
                         Rng& rng)
    : input_shape_(std::move(input_shape)) {
  if (hidden.empty()) throw ParameterError("MlpDenoiser needs at least one hidden layer");
  if (timesteps < 1) throw ParameterError("MlpDenoiser needs a positive timestep count");
  const std::size_t dim = shape_numel(input_shape_);
  embedding_ = zeros_param({static_cast<std::size_t>(timesteps), hidden.front()});
  std::size_t in = dim;
  for (std::size_t width : hidden) {
    weights_.push_back(uniform_init({width, in}, in, rng));
    biases_.push_back(zeros_param({width}));
    in = width;
  }
  weights_.push_back(uniform_init({dim, in}, in, rng));
  biases_.push_back(zeros_param({dim}));
}

MlpDenoiser::MlpDenoiser(Shape input_shape, std::vector<Tensor> parameters)
    : input_shape_(std::move(input_shape)) {
  if (parameters.size() < 5 || parameters.size() % 2 != 1) {
    throw ShapeError("MlpDenoiser: malformed parameter list");
  }
  embedding_ = as_param(parameters[0]);
  std::size_t in = shape_numel(input_shape_);
  for (std::size_t i = 1; i < parameters.size(); i += 2) {
    const Tensor& w = parameters[i];
    if (w.rank() != 2 || w.shape()[1] != in) throw ShapeError("MlpDenoiser: bad weight shape");
    expect_shape(parameters[i + 1], {w.shape()[0]}, "MlpDenoiser bias");
    weights_.push_back(as_param(w));
    biases_.push_back(as_param(parameters[i + 1]));
    in = w.shape()[0];
  }
  if (in != shape_numel(input_shape_)) throw ShapeError("MlpDenoiser: output width mismatch");
  if (embedding_.rank() != 2 || embedding_.shape()[1] != weights_[0].shape()[0]) {
    throw ShapeError("MlpDenoiser: time embedding width mismatch");
  }
}

std::vector<Tensor> MlpDenoiser::parameters() const {
  std::vector<Tensor> p{embedding_};
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    p.push_back(weights_[i]);
    p.push_back(biases_[i]);
  }
  return p;
}

int MlpDenoiser::num_timesteps() const { return static_cast<int>(embedding_.shape()[0]); }

Tensor MlpDenoiser::predict_noise(const Tensor& x_t, int t) const {
  check_input(x_t, input_shape_, "MlpDenoiser");
  if (t < 1 || t > num_timesteps()) {
    throw IndexError("timestep " + std::to_string(t) + " outside [1, " +
                     std::to_string(num_timesteps()) + "]");
  }
  Tensor h = reshape(x_t, {x_t.numel()});
  for (std::size_t i = 0; i + 1 < weights_.size(); ++i) {
    Tensor pre = dense(weights_[i], h, biases_[i]);
    if (i == 0) pre = pre + row(embedding_, static_cast<std::size_t>(t - 1));
    h = silu(pre);
  }
  return reshape(dense(weights_.back(), h, biases_.back()), input_shape_);
}

// --------------------------------------------------------------- ConvDenoiser

ConvDenoiser::ConvDenoiser(Shape input_shape, std::size_t channels, int timesteps, Rng& rng)
    : input_shape_(std::move(input_shape)) {
  if (input_shape_.size() != 3) throw ShapeError("ConvDenoiser expects [c x h x w] inputs");
  if (timesteps < 1) throw ParameterError("ConvDenoiser needs a positive timestep count");
  const std::size_t c = input_shape_[0];
  embedding_ = zeros_param({static_cast<std::size_t>(timesteps), channels});
  const std::size_t ins[3] = {c, channels, channels};
  const std::size_t outs[3] = {channels, channels, c};
  for (int l = 0; l < 3; ++l) {
    kernels_.push_back(uniform_init({outs[l], ins[l], 3, 3}, ins[l] * 9, rng));
    biases_.push_back(zeros_param({outs[l]}));
  }
  std::vector<float> mix(2 * static_cast<std::size_t>(timesteps));
  for (std::size_t i = 0; i < mix.size(); i += 2) mix[i + 1] = 1.0f;
  output_mix_ = as_param(Tensor({static_cast<std::size_t>(timesteps), 2}, std::move(mix)));
}

ConvDenoiser::ConvDenoiser(Shape input_shape, std::vector<Tensor> parameters)
    : input_shape_(std::move(input_shape)) {
  if (input_shape_.size() != 3 || parameters.size() != 8) {
    throw ShapeError("ConvDenoiser: malformed parameter list");
  }
  embedding_ = as_param(parameters[0]);
  std::size_t in = input_shape_[0];
  for (std::size_t i = 1; i < 7; i += 2) {
    const Tensor& k = parameters[i];
    if (k.rank() != 4 || k.shape()[1] != in || k.shape()[2] != 3 || k.shape()[3] != 3) {
      throw ShapeError("ConvDenoiser: bad kernel shape " + shape_string(k.shape()));
    }
    expect_shape(parameters[i + 1], {k.shape()[0]}, "ConvDenoiser bias");
    kernels_.push_back(as_param(k));
    biases_.push_back(as_param(parameters[i + 1]));
    in = k.shape()[0];
  }
  if (in != input_shape_[0]) throw ShapeError("ConvDenoiser: output channels mismatch");
  if (embedding_.rank() != 2 || embedding_.shape()[1] != kernels_[0].shape()[0]) {
    throw ShapeError("ConvDenoiser: time embedding width mismatch");
  }
  output_mix_ = as_param(parameters[7]);
  expect_shape(output_mix_, {embedding_.shape()[0], 2}, "ConvDenoiser output mix");
}

std::vector<Tensor> ConvDenoiser::parameters() const {
  std::vector<Tensor> p{embedding_};
  for (std::size_t i = 0; i < kernels_.size(); ++i) {
    p.push_back(kernels_[i]);
    p.push_back(biases_[i]);
  }
  p.push_back(output_mix_);
  return p;
}

int ConvDenoiser::num_timesteps() const { return static_cast<int>(embedding_.shape()[0]); }

Tensor ConvDenoiser::predict_noise(const Tensor& x_t, int t) const {
  check_input(x_t, input_shape_, "ConvDenoiser");
  if (t < 1 || t > num_timesteps()) {
    throw IndexError("timestep " + std::to_string(t) + " outside [1, " +
                     std::to_string(num_timesteps()) + "]");
  }
  Tensor h = add_channel_bias(conv2d(x_t, kernels_[0], 1, 1), biases_[0]);
  h = silu(add_channel_bias(h, row(embedding_, static_cast<std::size_t>(t - 1))));
  h = silu(add_channel_bias(conv2d(h, kernels_[1], 1, 1), biases_[1]));
  const Tensor g = add_channel_bias(conv2d(h, kernels_[2], 1, 1), biases_[2]);
  const Tensor mix = row(output_mix_, static_cast<std::size_t>(t - 1));
  return x_t * pick(mix, 0) + g * pick(mix, 1);
}

// -------------------------------------------------------------- MlpClassifier

MlpClassifier::MlpClassifier(Shape input_shape, std::vector<std::size_t> hidden,
                             std::size_t classes, Rng& rng)
    : input_shape_(std::move(input_shape)) {
  if (classes < 2) throw ParameterError("classifier needs at least 2 classes");
  std::size_t in = shape_numel(input_shape_);
  for (std::size_t width : hidden) {
    weights_.push_back(uniform_init({width, in}, in, rng));
    biases_.push_back(zeros_param({width}));
    in = width;
  }
  weights_.push_back(uniform_init({classes, in}, in, rng));
  biases_.push_back(zeros_param({classes}));
}

MlpClassifier::MlpClassifier(Shape input_shape, std::vector<Tensor> parameters)
    : input_shape_(std::move(input_shape)) {
  if (parameters.size() < 2 || parameters.size() % 2 != 0) {
    throw ShapeError("MlpClassifier: malformed parameter list");
  }
  std::size_t in = shape_numel(input_shape_);
  for (std::size_t i = 0; i < parameters.size(); i += 2) {
    const Tensor& w = parameters[i];
    if (w.rank() != 2 || w.shape()[1] != in) throw ShapeError("MlpClassifier: bad weight shape");
    expect_shape(parameters[i + 1], {w.shape()[0]}, "MlpClassifier bias");
    weights_.push_back(as_param(w));
    biases_.push_back(as_param(parameters[i + 1]));
    in = w.shape()[0];
  }
  if (in < 2) throw ParameterError("classifier needs at least 2 classes");
}

std::vector<Tensor> MlpClassifier::parameters() const {
  std::vector<Tensor> p;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    p.push_back(weights_[i]);
    p.push_back(biases_[i]);
  }
  return p;
}

std::size_t MlpClassifier::num_classes() const { return weights_.back().shape()[0]; }

Tensor MlpClassifier::hidden_forward(const Tensor& x) const {
  check_input(x, input_shape_, "MlpClassifier");
  Tensor h = reshape(x, {x.numel()});
  for (std::size_t i = 0; i + 1 < weights_.size(); ++i) h = silu(dense(weights_[i], h, biases_[i]));
  return h;
}

Tensor MlpClassifier::features(const Tensor& x) const { return hidden_forward(x); }

Tensor MlpClassifier::logits(const Tensor& x) const {
  return dense(weights_.back(), hidden_forward(x), biases_.back());
}

// ------------------------------------------------------------- ConvClassifier

constexpr std::size_t kC1 = 16;

ConvClassifier::ConvClassifier(Shape input_shape, std::size_t classes, Rng& rng)
    : input_shape_(std::move(input_shape)) {
  if (input_shape_.size() != 3) throw ShapeError("ConvClassifier expects [c x h x w] inputs");
  if (classes < 2) throw ParameterError("classifier needs at least 2 classes");
  const std::size_t c = input_shape_[0];
  kernels_.push_back(uniform_init({kC1, c, 3, 3}, c * 9, rng));
  conv_biases_.push_back(zeros_param({kC1}));
  kernels_.push_back(uniform_init({16, kC1, 3, 3}, kC1 * 9, rng));
  conv_biases_.push_back(zeros_param({16}));
  const std::size_t flat =
      16 * conv_out(conv_out(input_shape_[1])) * conv_out(conv_out(input_shape_[2]));
  dense_ = zeros_param({classes, flat});
  dense_bias_ = zeros_param({classes});
}

ConvClassifier::ConvClassifier(Shape input_shape, std::vector<Tensor> parameters)
    : input_shape_(std::move(input_shape)) {
  if (input_shape_.size() != 3 || parameters.size() != 6) {
    throw ShapeError("ConvClassifier: malformed parameter list");
  }
  expect_shape(parameters[0], {kC1, input_shape_[0], 3, 3}, "ConvClassifier kernel 1");
  expect_shape(parameters[1], {kC1}, "ConvClassifier bias 1");
  expect_shape(parameters[2], {16, kC1, 3, 3}, "ConvClassifier kernel 2");
  expect_shape(parameters[3], {16}, "ConvClassifier bias 2");
  const std::size_t flat =
      16 * conv_out(conv_out(input_shape_[1])) * conv_out(conv_out(input_shape_[2]));
  if (parameters[4].rank() != 2 || parameters[4].shape()[1] != flat) {
    throw ShapeError("ConvClassifier: dense weight shape mismatch");
  }
  expect_shape(parameters[5], {parameters[4].shape()[0]}, "ConvClassifier dense bias");
  kernels_ = {as_param(parameters[0]), as_param(parameters[2])};
  conv_biases_ = {as_param(parameters[1]), as_param(parameters[3])};
  dense_ = as_param(parameters[4]);
  dense_bias_ = as_param(parameters[5]);
}

std::vector<Tensor> ConvClassifier::parameters() const {
  return {kernels_[0], conv_biases_[0], kernels_[1], conv_biases_[1], dense_, dense_bias_};
}

std::size_t ConvClassifier::num_classes() const { return dense_.shape()[0]; }

Tensor ConvClassifier::features(const Tensor& x) const {
  check_input(x, input_shape_, "ConvClassifier");
  Tensor h = silu(add_channel_bias(conv2d(x, kernels_[0], 2, 1), conv_biases_[0]));
  h = silu(add_channel_bias(conv2d(h, kernels_[1], 2, 1), conv_biases_[1]));
  return reshape(h, {h.numel()});
}

Tensor ConvClassifier::logits(const Tensor& x) const {
  return dense(dense_, features(x), dense_bias_);
}

// -------------------------------------------------------------------- helpers

std::unique_ptr<Model> make_model(ModelKind kind, Shape input_shape,
                                  std::vector<Tensor> parameters) {
  switch (kind) {
    case ModelKind::kMlpDenoiser:
      return std::make_unique<MlpDenoiser>(std::move(input_shape), std::move(parameters));
    case ModelKind::kConvDenoiser:
      return std::make_unique<ConvDenoiser>(std::move(input_shape), std::move(parameters));
    case ModelKind::kMlpClassifier:
      return std::make_unique<MlpClassifier>(std::move(input_shape), std::move(parameters));
    case ModelKind::kConvClassifier:
      return std::make_unique<ConvClassifier>(std::move(input_shape), std::move(parameters));
  }
  throw FormatError("unknown model kind " + std::to_string(static_cast<std::uint32_t>(kind)));
}

std::vector<double> classify(const Classifier& m, const Tensor& x) {
  const Tensor logits = m.logits(x.requires_grad() ? x.detach() : x);
  auto z = logits.data();
  const double mx = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double s = 0;
  for (std::size_t i = 0; i < z.size(); ++i) s += (p[i] = std::exp(double(z[i]) - mx));
  for (double& v : p) v /= s;
  return p;
}

std::size_t predicted_label(const Classifier& m, const Tensor& x) {
  const auto p = classify(m, x);
  return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

Tensor cross_entropy(const Classifier& m, const Tensor& x, std::size_t target) {
  if (target >= m.num_classes()) {
    throw IndexError("target class " + std::to_string(target) + " outside [0, " +
                     std::to_string(m.num_classes()) + ")");
  }
  return neg(pick(log_softmax(m.logits(x)), target));
}

Tensor input_gradient(const Classifier& m, const Tensor& x, std::size_t target) {
  if (target >= m.num_classes()) {
    throw IndexError("target class " + std::to_string(target) + " outside [0, " +
                     std::to_string(m.num_classes()) + ")");
  }
  Tensor leaf = x.detach().set_requires_grad();
  backward(cross_entropy(m, leaf, target));
  return leaf.grad_tensor();
}

}  // namespace fastcf
