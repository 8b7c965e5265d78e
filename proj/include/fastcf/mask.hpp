// Copyright 2026 The fastcf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <utility>
#include <vector>

#include "fastcf/tensor.hpp"

namespace fastcf {

/// Binary change mask. `mask` has the full image shape with identical values
/// across channels, so it multiplies images directly.
struct MaskState {
  Tensor mask;
  bool active = false;

  /// Fraction of ones.
  double coverage() const;
};

/// Mean |denoised - x0| over channels, divided by its maximum, thresholded
/// (strictly greater than `threshold` is a one) and dilated with a
/// `dilation` x `dilation` square. Images are [c, h, w]; rank-2 inputs are
/// read as [1, h, w] and rank-1 inputs as [1, 1, n]. A zero difference map
/// gives a zero mask.
MaskState extract_mask(const Tensor& denoised, const Tensor& x0, double threshold, int dilation);

/// Square binary dilation of a single h x w plane, clipped at the borders.
std::vector<float> dilate(std::span<const float> plane, std::size_t h, std::size_t w, int width);

/// (x_t M + x_t_fresh (1 - M), denoised M + x0 (1 - M)). Differentiable in
/// x_t and denoised; outside the mask the substitutes are copied exactly.
std::pair<Tensor, Tensor> apply_mask(const MaskState& m, const Tensor& x_t, const Tensor& denoised,
                                     const Tensor& x_t_fresh, const Tensor& x0);

/// An all-zero, inactive mask for `shape`.
MaskState empty_mask(const Shape& shape);

}  // namespace fastcf
