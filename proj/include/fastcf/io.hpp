// Copyright 2026 The fastcf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fastcf/models.hpp"
#include "fastcf/tensor.hpp"

namespace fastcf {

namespace fs = std::filesystem;

/// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const fs::path& path, std::string_view bytes);
std::string read_file(const fs::path& path);

// ---------------------------------------------------------------- checkpoints
//
// Layout (little-endian):
//   "FCF1" | u32 version | u32 model kind | u32 entry count
//   | per entry: u32 rank, rank x u32 extents   (entry 0 = input shape,
//                                               then one per parameter)
//   | float32 weights of every parameter in order
//   | u64 FNV-1a of all preceding bytes

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::uint64_t fnv1a64(std::string_view bytes);

std::string encode_checkpoint(const Model& model);
/// Throws FormatError (bad magic or layout), CorruptionError (checksum) or
/// VersionError (unsupported version).
std::unique_ptr<Model> decode_checkpoint(std::string_view bytes);

void save_checkpoint(const Model& model, const fs::path& path);
std::unique_ptr<Model> load_checkpoint(const fs::path& path);

// --------------------------------------------------------------------- images

/// Binary PGM (P5, maxval 255); values map linearly [-1, 1] <-> [0, 255].
/// Accepts [h, w] or [1, h, w] tensors.
std::string encode_pgm(const Tensor& image);
/// Returns a [1, h, w] tensor. Throws ParseError on malformed input.
Tensor decode_pgm(std::string_view bytes);
void write_pgm(const Tensor& image, const fs::path& path);
Tensor read_pgm(const fs::path& path);

// -------------------------------------------------------------------- configs

/// Flat `key = value` text; `#` starts a comment. Keys are kept sorted so the
/// written form is canonical.
using ConfigMap = std::map<std::string, std::string>;

ConfigMap parse_config(std::string_view text);
std::string format_config(const ConfigMap& config);
ConfigMap load_config(const fs::path& path);
void save_config(const ConfigMap& config, const fs::path& path);

// -------------------------------------------------------------------- reports

struct ReportRow {
  std::string level;
  std::string metric;
  double value = 0.0;
  bool operator==(const ReportRow&) const = default;
};

struct Report {
  std::string command;
  std::uint64_t seed = 0;
  ConfigMap config;
  std::vector<ReportRow> rows;
  /// Free-form structured details (curves, counts, per-sample notes).
  nlohmann::ordered_json details = nlohmann::ordered_json::object();

  bool operator==(const Report&) const = default;
};

std::string report_to_json(const Report& report);
Report report_from_json(std::string_view text);
/// level,metric,value with one row per (level, metric) pair.
std::string report_to_csv(const Report& report);
/// Writes `<stem>.json` and `<stem>.csv` next to each other.
void write_report(const Report& report, const fs::path& stem);
Report read_report(const fs::path& json_path);

}  // namespace fastcf
