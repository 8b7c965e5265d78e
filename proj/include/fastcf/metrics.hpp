// Copyright 2026 The fastcf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "fastcf/tensor.hpp"

namespace fastcf {

/// Mean absolute element difference.
double l1_distance(const Tensor& x, const Tensor& xc);

/// Target-class confidences on originals and their counterfactuals, with the
/// true shortcut label of each original.
struct PairedConfidences {
  std::vector<double> original;
  std::vector<double> counterfactual;
  std::vector<int> shortcut;

  /// Throws ParameterError on unequal lengths or probabilities outside [0, 1].
  void validate() const;
};

/// (1/N) sum |f(x_i) - f(x_i^c)|.
double mad(const PairedConfidences& p);
/// (1/N) sum (f(x_i) - f(x_i^c)) over the samples with shortcut label `group`.
double md(const PairedConfidences& p, int group);
/// Fraction of counterfactual confidences >= threshold.
double flip_ratio(const PairedConfidences& p, double threshold = 0.5);
double flip_ratio(std::span<const double> counterfactual_confidences, double threshold = 0.5);

/// Mann-Whitney AUROC with average ranks for ties; labels are 0/1.
double auroc(std::span<const double> scores, std::span<const int> labels);

/// Frechet distance between Gaussians fitted to two feature sets.
double frechet_gaussian_distance(const std::vector<std::vector<double>>& a,
                                 const std::vector<std::vector<double>>& b);

}  // namespace fastcf
