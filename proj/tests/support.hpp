// Copyright 2026 The fastcf Authors
// SPDX-License-Identifier: Apache-2.0

// Independent oracles shared by the test binaries. Nothing here calls into
// the library's numerical kernels.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "fastcf/tensor.hpp"

namespace fastcf::testing {

/// Central differences of a scalar function of a float tensor, with the
/// perturbation applied in float32 and the difference taken in double.
inline std::vector<double> finite_difference(const std::function<double(const Tensor&)>& f,
                                             const Tensor& at, double step = 1e-3) {
  std::vector<double> g(at.numel());
  for (std::size_t i = 0; i < at.numel(); ++i) {
    Tensor plus = at.detach();
    Tensor minus = at.detach();
    const float v = at.at(i);
    plus.mutable_data()[i] = static_cast<float>(v + step);
    minus.mutable_data()[i] = static_cast<float>(v - step);
    const double h = static_cast<double>(plus.at(i)) - static_cast<double>(minus.at(i));
    g[i] = (f(plus) - f(minus)) / h;
  }
  return g;
}

/// ||a - b|| / max(||a||, ||b||, floor).
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b,
                             double floor = 1e-6) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

inline std::vector<double> to_double(std::span<const float> v) {
  return {v.begin(), v.end()};
}

/// Two-sample Kolmogorov-Smirnov test; returns the asymptotic p-value.
inline double ks_two_sample_p(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
  }
  const double ne = static_cast<double>(a.size()) * b.size() / (a.size() + b.size());
  const double lambda = (std::sqrt(ne) + 0.12 + 0.11 / std::sqrt(ne)) * d;
  double sum = 0, sign = 1;
  for (int k = 1; k <= 100; ++k) {
    sum += sign * 2.0 * std::exp(-2.0 * k * k * lambda * lambda);
    sign = -sign;
  }
  return std::clamp(sum, 0.0, 1.0);
}

/// Direct nested-loop cross-correlation of x [c,h,w] with k [o,c,kh,kw].
inline std::vector<double> naive_conv2d(const Tensor& x, const Tensor& k, std::size_t stride,
                                        std::size_t pad) {
  const auto& xs = x.shape();
  const auto& ks = k.shape();
  const long c = static_cast<long>(xs[0]), h = static_cast<long>(xs[1]), w = static_cast<long>(xs[2]);
  const long o = static_cast<long>(ks[0]), kk = static_cast<long>(ks[2]);
  const long s = static_cast<long>(stride), p = static_cast<long>(pad);
  const long oh = (h + 2 * p - kk) / s + 1, ow = (w + 2 * p - kk) / s + 1;
  std::vector<double> out(static_cast<std::size_t>(o * oh * ow), 0.0);
  for (long oc = 0; oc < o; ++oc)
    for (long y = 0; y < oh; ++y)
      for (long xx = 0; xx < ow; ++xx) {
        double acc = 0;
        for (long ic = 0; ic < c; ++ic)
          for (long dy = 0; dy < kk; ++dy)
            for (long dx = 0; dx < kk; ++dx) {
              const long iy = y * s + dy - p, ix = xx * s + dx - p;
              if (iy < 0 || ix < 0 || iy >= h || ix >= w) continue;
              acc += static_cast<double>(x.at(static_cast<std::size_t>((ic * h + iy) * w + ix))) *
                     k.at(static_cast<std::size_t>(((oc * c + ic) * kk + dy) * kk + dx));
            }
        out[static_cast<std::size_t>((oc * oh + y) * ow + xx)] = acc;
      }
  return out;
}

/// Binary dilation with a width x width square, by brute force.
inline std::vector<float> naive_dilate(const std::vector<float>& plane, int h, int w, int width) {
  std::vector<float> out(plane.size(), 0.0f);
  const int r = width / 2;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          const int sy = y + dy, sx = x + dx;
          if (sy >= 0 && sx >= 0 && sy < h && sx < w && plane[sy * w + sx] > 0.5f) {
            out[y * w + x] = 1.0f;
          }
        }
  return out;
}

/// Fresh empty directory under the system temp path.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("fastcf_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Source-tree directory holding pinned golden files.
inline std::filesystem::path golden_dir() {
#ifdef FASTCF_GOLDEN_DIR
  return FASTCF_GOLDEN_DIR;
#else
  return "tests/golden";
#endif
}

}  // namespace fastcf::testing
