// Copyright 2026 The fastcf Authors
// SPDX-License-Identifier: Apache-2.0

// Catalogue of differentiable primitives for gradient checks.

#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "fastcf/ops.hpp"
#include "fastcf/rng.hpp"
#include "fastcf/tensor.hpp"

namespace fastcf::testing {

// Random tensor whose entries keep at least `margin` away from zero, so that
// kinked primitives (abs, relu) are differentiable at every sample.
inline Tensor away_from_zero(Shape shape, Rng& rng, float margin = 0.1f) {
  Tensor t = Tensor::randn(std::move(shape), rng);
  for (float& v : t.mutable_data()) v = v >= 0 ? v + margin : v - margin;
  return t;
}

struct Primitive {
  const char* name;
  std::function<Tensor(Rng&)> input;
  std::function<Tensor(const Tensor&)> apply;
};

inline std::vector<Primitive> unary_primitives() {
  auto dense = [](Shape s) { return [s](Rng& r) { return Tensor::randn(s, r); }; };
  auto kinked = [](Shape s) { return [s](Rng& r) { return away_from_zero(s, r); }; };
  auto positive = [](Shape s) {
    return [s](Rng& r) {
      Tensor t = Tensor::randn(s, r);
      for (float& v : t.mutable_data()) v = 0.5f + std::abs(v);
      return t;
    };
  };
  Rng fixed(1234);
  const Tensor other = Tensor::randn({3, 4}, fixed);
  const Tensor other_pos = [&] {
    Tensor t = Tensor::randn({3, 4}, fixed);
    for (float& v : t.mutable_data()) v = 0.5f + std::abs(v);
    return t;
  }();
  const Tensor right = Tensor::randn({4, 2}, fixed);
  const Tensor kernels = Tensor::randn({2, 2, 3, 3}, fixed);
  const Tensor image = Tensor::randn({2, 6, 6}, fixed);
  const Tensor bias = Tensor::randn({2}, fixed);
  const Tensor table = Tensor::randn({4, 3}, fixed);
  return {
      {"add", dense({3, 4}), [=](const Tensor& x) { return add(x, other); }},
      {"sub", dense({3, 4}), [=](const Tensor& x) { return sub(other, x); }},
      {"mul", dense({3, 4}), [=](const Tensor& x) { return mul(x, other); }},
      {"div_numerator", dense({3, 4}), [=](const Tensor& x) { return div(x, other_pos); }},
      {"div_denominator", positive({3, 4}), [=](const Tensor& x) { return div(other, x); }},
      {"add_scalar", dense({3, 4}), [](const Tensor& x) { return add(x, 0.7f); }},
      {"mul_scalar", dense({3, 4}), [](const Tensor& x) { return mul(x, -1.3f); }},
      {"scalar_tensor", dense({}), [=](const Tensor& x) { return mul(other, x); }},
      {"neg", dense({3, 4}), [](const Tensor& x) { return neg(x); }},
      {"square", dense({3, 4}), [](const Tensor& x) { return square(x); }},
      {"abs", kinked({3, 4}), [](const Tensor& x) { return abs(x); }},
      {"exp", dense({3, 4}), [](const Tensor& x) { return exp(x); }},
      {"log", positive({3, 4}), [](const Tensor& x) { return log(x); }},
      {"relu", kinked({3, 4}), [](const Tensor& x) { return relu(x); }},
      {"silu", dense({3, 4}), [](const Tensor& x) { return silu(x); }},
      {"sum", dense({3, 4}), [](const Tensor& x) { return sum(x); }},
      {"mean", dense({3, 4}), [](const Tensor& x) { return mean(x); }},
      {"matmul_left", dense({3, 4}), [=](const Tensor& x) { return matmul(x, right); }},
      {"matmul_right", dense({4, 2}), [=](const Tensor& x) { return matmul(other, x); }},
      {"reshape", dense({3, 4}), [](const Tensor& x) { return reshape(x, {2, 6}); }},
      {"log_softmax", dense({6}), [](const Tensor& x) { return log_softmax(x); }},
      {"softmax", dense({6}), [](const Tensor& x) { return softmax(x); }},
      {"pick", dense({6}), [](const Tensor& x) { return pick(x, 4); }},
      {"row", dense({4, 3}), [](const Tensor& x) { return row(x, 2); }},
      {"conv2d_input", dense({2, 6, 6}), [=](const Tensor& x) { return conv2d(x, kernels, 1, 1); }},
      {"conv2d_kernels", dense({2, 2, 3, 3}), [=](const Tensor& k) { return conv2d(image, k, 2, 1); }},
      {"add_channel_bias_x", dense({2, 6, 6}), [=](const Tensor& x) { return add_channel_bias(x, bias); }},
      {"add_channel_bias_b", dense({2}), [=](const Tensor& b) { return add_channel_bias(image, b); }},
      {"embedding_lookup", dense({4, 3}), [=](const Tensor& t) { return row(t, 0) * row(table, 1); }},
  };
}

// Scalarizes an op output with fixed random weights so every output element
// contributes to the checked gradient.
inline double projected(const Tensor& out, const std::vector<float>& w) {
  double acc = 0;
  for (std::size_t i = 0; i < out.numel(); ++i) acc += static_cast<double>(out.at(i)) * w[i];
  return acc;
}

}  // namespace fastcf::testing
