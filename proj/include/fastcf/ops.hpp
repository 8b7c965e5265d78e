// Copyright 2026 The fastcf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "fastcf/tensor.hpp"

// Differentiable primitives. A result is recorded on the tape whenever any
// input requires grad. Binary elementwise ops accept identical shapes or a
// rank-0 scalar on either side; nothing else broadcasts.
namespace fastcf {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, float b);
Tensor mul(const Tensor& a, float b);
Tensor neg(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, float b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, float b) { return add(a, -b); }
inline Tensor operator*(const Tensor& a, float b) { return mul(a, b); }
inline Tensor operator*(float a, const Tensor& b) { return mul(b, a); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

Tensor square(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor silu(const Tensor& a);

/// Sum / mean of all elements -> rank-0 tensor.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// [m x k] . [k x n] -> [m x n]; dA = dC.B^T, dB = A^T.dC.
Tensor matmul(const Tensor& a, const Tensor& b);
/// Same values, new shape of equal element count.
Tensor reshape(const Tensor& a, Shape shape);

/// Rank-1 logits -> log-probabilities (max-shifted, stable).
Tensor log_softmax(const Tensor& logits);
Tensor softmax(const Tensor& logits);
/// Element `index` of a tensor as a rank-0 tensor.
Tensor pick(const Tensor& a, std::size_t index);
/// Row `index` of a rank-2 table as a rank-1 tensor (embedding lookup).
Tensor row(const Tensor& table, std::size_t index);

/// Cross-correlation of x [c_in x h x w] with kernels [c_out x c_in x k x k].
Tensor conv2d(const Tensor& x, const Tensor& kernels, std::size_t stride, std::size_t padding);
/// Adds bias[c] to every pixel of channel c of x [c x h x w].
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);

/// Identity whose backward invokes `hook` once per replay (instrumentation).
Tensor on_backward(const Tensor& a, std::function<void()> hook);

/// Vector-Jacobian product for a custom primitive: receives the output
/// gradient and returns the gradient w.r.t. the single input.
using VjpFn = std::function<std::vector<double>(std::span<const double> grad_out)>;

/// Records a user-defined primitive with analytic backward.
Tensor custom_unary(std::string_view name, const Tensor& input, Tensor value, VjpFn vjp);

}  // namespace fastcf
