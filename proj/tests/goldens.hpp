// Copyright 2026 The fastcf Authors
// SPDX-License-Identifier: Apache-2.0

// Inputs behind the pinned files in tests/golden.

#pragma once

#include <vector>

#include "fastcf/io.hpp"
#include "fastcf/models.hpp"
#include "fastcf/tensor.hpp"

namespace fastcf::testing {

// Fixed weights; no random generator involved, so the bytes are portable.
inline MlpClassifier golden_classifier() {
  std::vector<float> w(6), b = {0.25f, -0.5f};
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<float>(i) * 0.125f - 0.3f;
  return MlpClassifier({3}, {Tensor({2, 3}, w), Tensor({2}, b)});
}

inline Tensor golden_image() {
  std::vector<float> v(12);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = -1.0f + static_cast<float>(i) * (2.0f / 11.0f);
  return Tensor({1, 3, 4}, v);
}

inline ConfigMap golden_config() {
  return {{"tau", "160"}, {"tau_w", "80"}, {"threshold", "0.15"}, {"dilation", "21"},
          {"variant", "fastdime"}, {"seed", "7"}};
}

inline Report golden_report() {
  Report r;
  r.command = "shortcut-audit";
  r.seed = 7;
  r.config = golden_config();
  r.rows = {{"100", "mad", 0.6904296875}, {"100", "auroc_test_k", 1.0}, {"50", "mad", 0.125}};
  r.details["calls"] = {{"forward", 12000}, {"backward", 0}};
  r.details["notes"] = nlohmann::ordered_json::array({"a", "b"});
  return r;
}

}  // namespace fastcf::testing
