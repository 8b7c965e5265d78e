// Copyright 2026 The fastcf Authors
// SPDX-License-Identifier: Apache-2.0

#include "fastcf/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "fastcf/errors.hpp"

namespace fastcf {

double l1_distance(const Tensor& x, const Tensor& xc) {
  if (x.shape() != xc.shape()) {
    throw ShapeError("l1_distance: " + shape_string(x.shape()) + " vs " + shape_string(xc.shape()));
  }
  if (x.numel() == 0) throw ParameterError("l1_distance of empty tensors");
  auto a = x.data();
  auto b = xc.data();
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    s += std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
  }
  return s / static_cast<double>(a.size());
}

void PairedConfidences::validate() const {
  if (original.size() != counterfactual.size() ||
      (!shortcut.empty() && shortcut.size() != original.size())) {
    throw ParameterError("paired confidences have unequal lengths");
  }
  auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!std::all_of(original.begin(), original.end(), in_unit) ||
      !std::all_of(counterfactual.begin(), counterfactual.end(), in_unit)) {
    throw ParameterError("confidences must lie in [0, 1]");
  }
}

double mad(const PairedConfidences& p) {
  p.validate();
  if (p.original.empty()) throw ParameterError("mad of an empty set");
  double s = 0.0;
  for (std::size_t i = 0; i < p.original.size(); ++i) {
    s += std::abs(p.original[i] - p.counterfactual[i]);
  }
  return s / static_cast<double>(p.original.size());
}

double md(const PairedConfidences& p, int group) {
  p.validate();
  if (p.shortcut.size() != p.original.size()) throw ParameterError("md needs shortcut labels");
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < p.original.size(); ++i) {
    if (p.shortcut[i] != group) continue;
    s += p.original[i] - p.counterfactual[i];
    ++n;
  }
  if (n == 0) throw ParameterError("md: no samples with shortcut label " + std::to_string(group));
  return s / static_cast<double>(n);
}

double flip_ratio(std::span<const double> cf, double threshold) {
  if (cf.empty()) throw ParameterError("flip_ratio of an empty set");
  const auto hits = std::count_if(cf.begin(), cf.end(), [&](double v) { return v >= threshold; });
  return static_cast<double>(hits) / static_cast<double>(cf.size());
}

double flip_ratio(const PairedConfidences& p, double threshold) {
  p.validate();
  return flip_ratio(p.counterfactual, threshold);
}

double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ParameterError("auroc: unequal lengths");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0.0;
  std::size_t pos = 0, neg = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + 1 + j);  // average of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (labels[idx[k]] == 1) {
        pos_rank_sum += rank;
        ++pos;
      } else if (labels[idx[k]] == 0) {
        ++neg;
      } else {
        throw ParameterError("auroc labels must be 0 or 1");
      }
    }
    i = j;
  }
  if (pos == 0 || neg == 0) throw UndefinedMetricError("auroc needs both labels present");
  const double np = static_cast<double>(pos), nn = static_cast<double>(neg);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

namespace {

struct Moments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

Moments moments(const std::vector<std::vector<double>>& v, std::size_t dim) {
  if (v.size() < 2) throw ParameterError("frechet distance needs >= 2 vectors per set");
  Eigen::MatrixXd m(v.size(), dim);
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i].size() != dim) throw ShapeError("frechet distance: feature dimension mismatch");
    for (std::size_t j = 0; j < dim; ++j) m(i, j) = v[i][j];
  }
  Moments r;
  r.mean = m.colwise().mean();
  const Eigen::MatrixXd c = m.rowwise() - r.mean.transpose();
  r.cov = (c.transpose() * c) / static_cast<double>(v.size() - 1);
  return r;
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_gaussian_distance(const std::vector<std::vector<double>>& a,
                                 const std::vector<std::vector<double>>& b) {
  if (a.empty() || b.empty()) throw ParameterError("frechet distance needs >= 2 vectors per set");
  const std::size_t dim = a.front().size();
  const Moments ma = moments(a, dim), mb = moments(b, dim);
  // Tr (S_A S_B)^{1/2} = Tr (S_A^{1/2} S_B S_A^{1/2})^{1/2}; the inner product
  // is symmetric PSD, so a symmetric eigensolver with clamping suffices.
  const Eigen::MatrixXd ra = psd_sqrt(ma.cov);
  Eigen::MatrixXd inner = ra * mb.cov * ra;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(inner, Eigen::EigenvaluesOnly);
  const double tr_cross = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double d = (ma.mean - mb.mean).squaredNorm() + ma.cov.trace() + mb.cov.trace() -
                   2.0 * tr_cross;
  return std::max(0.0, d);
}

}  // namespace fastcf
