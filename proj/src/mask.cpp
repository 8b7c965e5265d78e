// Copyright 2026 The fastcf Authors
// SPDX-License-Identifier: Apache-2.0

#include "fastcf/mask.hpp"

#include <algorithm>
#include <cmath>

#include "fastcf/errors.hpp"
#include "fastcf/ops.hpp"

namespace fastcf {
namespace {

struct Planes {
  std::size_t c, h, w;
};

Planes planes_of(const Shape& s) {
  switch (s.size()) {
    case 1: return {1, 1, s[0]};
    case 2: return {1, s[0], s[1]};
    case 3: return {s[0], s[1], s[2]};
    default: throw ShapeError("mask: unsupported image rank " + std::to_string(s.size()));
  }
}

}  // namespace

double MaskState::coverage() const {
  if (mask.numel() == 0) return 0.0;
  double ones = 0.0;
  for (float v : mask.data()) ones += v;
  return ones / static_cast<double>(mask.numel());
}

std::vector<float> dilate(std::span<const float> plane, std::size_t h, std::size_t w, int width) {
  if (width < 1 || width % 2 == 0) throw ParameterError("dilation width must be odd and >= 1");
  const long r = width / 2;
  // A square structuring element separates into a row pass and a column pass.
  std::vector<float> rows(h * w, 0.0f), out(h * w, 0.0f);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (plane[y * w + x] == 0.0f) continue;
      const long lo = std::max(0L, static_cast<long>(x) - r);
      const long hi = std::min(static_cast<long>(w) - 1, static_cast<long>(x) + r);
      for (long xx = lo; xx <= hi; ++xx) rows[y * w + xx] = 1.0f;
    }
  }
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (rows[y * w + x] == 0.0f) continue;
      const long lo = std::max(0L, static_cast<long>(y) - r);
      const long hi = std::min(static_cast<long>(h) - 1, static_cast<long>(y) + r);
      for (long yy = lo; yy <= hi; ++yy) out[yy * w + x] = 1.0f;
    }
  }
  return out;
}

MaskState extract_mask(const Tensor& denoised, const Tensor& x0, double threshold, int dilation) {
  if (denoised.shape() != x0.shape()) {
    throw ShapeError("extract_mask: " + shape_string(denoised.shape()) + " vs " +
                     shape_string(x0.shape()));
  }
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ParameterError("mask threshold must lie in (0, 1)");
  }
  const Planes p = planes_of(x0.shape());
  const std::size_t hw = p.h * p.w;
  auto a = denoised.data();
  auto b = x0.data();
  std::vector<double> diff(hw, 0.0);
  for (std::size_t c = 0; c < p.c; ++c) {
    for (std::size_t i = 0; i < hw; ++i) {
      diff[i] += std::abs(static_cast<double>(a[c * hw + i]) - static_cast<double>(b[c * hw + i]));
    }
  }
  double peak = 0.0;
  for (double& d : diff) {
    d /= static_cast<double>(p.c);
    peak = std::max(peak, d);
  }
  std::vector<float> binary(hw, 0.0f);
  if (peak > 0.0) {
    for (std::size_t i = 0; i < hw; ++i) binary[i] = diff[i] / peak > threshold ? 1.0f : 0.0f;
  }
  const std::vector<float> plane = dilate(binary, p.h, p.w, dilation);
  std::vector<float> full(p.c * hw);
  for (std::size_t c = 0; c < p.c; ++c) std::copy(plane.begin(), plane.end(), full.begin() + c * hw);
  return {Tensor(x0.shape(), std::move(full)), true};
}

std::pair<Tensor, Tensor> apply_mask(const MaskState& m, const Tensor& x_t, const Tensor& denoised,
                                     const Tensor& x_t_fresh, const Tensor& x0) {
  const Shape& s = m.mask.shape();
  if (x_t.shape() != s || denoised.shape() != s || x_t_fresh.shape() != s || x0.shape() != s) {
    throw ShapeError("apply_mask: operands must share the mask shape " + shape_string(s));
  }
  std::vector<float> inv(m.mask.numel());
  auto mv = m.mask.data();
  for (std::size_t i = 0; i < inv.size(); ++i) {
    if (mv[i] != 0.0f && mv[i] != 1.0f) throw ContractError("apply_mask: mask is not binary");
    inv[i] = 1.0f - mv[i];
  }
  const Tensor keep = m.mask;
  const Tensor swap(s, std::move(inv));
  return {x_t * keep + x_t_fresh * swap, denoised * keep + x0 * swap};
}

MaskState empty_mask(const Shape& shape) { return {Tensor::zeros(shape), false}; }

}  // namespace fastcf
