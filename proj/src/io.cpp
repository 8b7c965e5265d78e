// Copyright 2026 The fastcf Authors
// SPDX-License-Identifier: Apache-2.0

#include "fastcf/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fastcf/errors.hpp"

namespace fastcf {

void write_file_atomic(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string());
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot rename into " + path.string());
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------- checkpoints

namespace {

constexpr std::string_view kMagic = "FCF1";

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }

  float f32() { return std::bit_cast<float>(u32()); }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) throw FormatError("checkpoint truncated");
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string encode_checkpoint(const Model& model) {
  const std::vector<Tensor> params = model.parameters();
  std::string out(kMagic);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(model.kind()));
  put_u32(out, static_cast<std::uint32_t>(params.size() + 1));
  auto put_shape = [&](const Shape& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    for (std::size_t e : s) put_u32(out, static_cast<std::uint32_t>(e));
  };
  put_shape(model.input_shape());
  for (const Tensor& p : params) put_shape(p.shape());
  for (const Tensor& p : params) {
    for (float v : p.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  put_u64(out, fnv1a64(out));
  return out;
}

std::unique_ptr<Model> decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < kMagic.size() || bytes.substr(0, kMagic.size()) != kMagic) {
    throw FormatError("not a checkpoint (bad magic)");
  }
  if (bytes.size() < kMagic.size() + 12 + 8) throw FormatError("checkpoint truncated");
  const std::string_view body = bytes.substr(0, bytes.size() - 8);
  std::uint64_t stored = 0;
  for (int i = 0; i < 8; ++i) {
    stored |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[body.size() + i]))
              << (8 * i);
  }
  if (stored != fnv1a64(body)) throw CorruptionError("checkpoint checksum mismatch");

  Reader r(body.substr(kMagic.size()));
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint version " + std::to_string(version) + ", expected " +
                       std::to_string(kCheckpointVersion));
  }
  const std::uint32_t kind = r.u32();
  if (kind < 1 || kind > 4) throw FormatError("unknown model kind " + std::to_string(kind));
  const std::uint32_t entries = r.u32();
  if (entries < 1 || entries > 4096) throw FormatError("implausible dimension table");
  std::vector<Shape> shapes(entries);
  std::size_t weights = 0;
  for (Shape& s : shapes) {
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw FormatError("implausible tensor rank");
    for (std::uint32_t i = 0; i < rank; ++i) s.push_back(r.u32());
    if (&s != &shapes.front()) weights += shape_numel(s);
  }
  if (r.remaining() != weights * 4) {
    throw FormatError("dimension table implies " + std::to_string(weights * 4) +
                      " payload bytes, found " + std::to_string(r.remaining()));
  }
  std::vector<Tensor> params;
  for (std::size_t i = 1; i < shapes.size(); ++i) {
    std::vector<float> v(shape_numel(shapes[i]));
    for (float& x : v) x = r.f32();
    params.emplace_back(shapes[i], std::move(v));
  }
  return make_model(static_cast<ModelKind>(kind), shapes.front(), std::move(params));
}

void save_checkpoint(const Model& model, const fs::path& path) {
  write_file_atomic(path, encode_checkpoint(model));
}

std::unique_ptr<Model> load_checkpoint(const fs::path& path) {
  return decode_checkpoint(read_file(path));
}

// --------------------------------------------------------------------- images

std::string encode_pgm(const Tensor& image) {
  const Shape& s = image.shape();
  const bool ok = s.size() == 2 || (s.size() == 3 && s[0] == 1);
  if (!ok) throw ShapeError("pgm needs a [h, w] or [1, h, w] image, got " + shape_string(s));
  const std::size_t h = s[s.size() - 2], w = s[s.size() - 1];
  std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (float v : image.data()) {
    const double q = std::round((std::clamp(static_cast<double>(v), -1.0, 1.0) + 1.0) * 127.5);
    out.push_back(static_cast<char>(static_cast<unsigned char>(q)));
  }
  return out;
}

Tensor decode_pgm(std::string_view bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&](const char* what) {
    skip_space();
    std::size_t v = 0, digits = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + static_cast<std::size_t>(bytes[pos] - '0');
      if (v > (1u << 20)) throw ParseError(std::string("pgm ") + what + " too large");
      ++pos;
      ++digits;
    }
    if (digits == 0) throw ParseError(std::string("pgm header: missing ") + what);
    return v;
  };
  if (bytes.substr(0, 2) != "P5") throw ParseError("pgm header: expected P5");
  pos = 2;
  const std::size_t w = number("width");
  const std::size_t h = number("height");
  const std::size_t maxval = number("maxval");
  if (maxval != 255) throw ParseError("pgm maxval must be 255");
  if (w == 0 || h == 0) throw ParseError("pgm has zero extent");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw ParseError("pgm header not terminated");
  }
  ++pos;
  if (bytes.size() - pos != w * h) {
    throw ParseError("pgm payload has " + std::to_string(bytes.size() - pos) + " bytes, expected " +
                     std::to_string(w * h));
  }
  std::vector<float> v(w * h);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto q = static_cast<unsigned char>(bytes[pos + i]);
    v[i] = static_cast<float>(q / 127.5 - 1.0);
  }
  return Tensor({1, h, w}, std::move(v));
}

void write_pgm(const Tensor& image, const fs::path& path) {
  write_file_atomic(path, encode_pgm(image));
}

Tensor read_pgm(const fs::path& path) { return decode_pgm(read_file(path)); }

// -------------------------------------------------------------------- configs

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

ConfigMap parse_config(std::string_view text) {
  ConfigMap out;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    ++line_no;
    start = end + 1;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ParseError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    std::string key = trim(std::string_view(body).substr(0, eq));
    if (key.empty()) throw ParseError("config line " + std::to_string(line_no) + ": empty key");
    out[std::move(key)] = trim(std::string_view(body).substr(eq + 1));
  }
  return out;
}

std::string format_config(const ConfigMap& config) {
  std::string out;
  for (const auto& [k, v] : config) {
    if (k.find_first_of("=#\n") != std::string::npos || v.find_first_of("#\n") != std::string::npos) {
      throw ConfigError("config entry '" + k + "' cannot be represented");
    }
    out += k + " = " + v + "\n";
  }
  return out;
}

ConfigMap load_config(const fs::path& path) { return parse_config(read_file(path)); }

void save_config(const ConfigMap& config, const fs::path& path) {
  write_file_atomic(path, format_config(config));
}

// -------------------------------------------------------------------- reports

std::string report_to_json(const Report& report) {
  nlohmann::ordered_json j;
  j["command"] = report.command;
  j["seed"] = report.seed;
  nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
  for (const auto& [k, v] : report.config) cfg[k] = v;
  j["config"] = cfg;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const ReportRow& r : report.rows) {
    rows.push_back({{"level", r.level}, {"metric", r.metric}, {"value", r.value}});
  }
  j["rows"] = rows;
  j["details"] = report.details;
  return j.dump(2) + "\n";
}

Report report_from_json(std::string_view text) {
  try {
    const auto j = nlohmann::ordered_json::parse(text);
    Report r;
    r.command = j.at("command").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& [k, v] : j.at("config").items()) r.config[k] = v.get<std::string>();
    for (const auto& row : j.at("rows")) {
      r.rows.push_back({row.at("level").get<std::string>(), row.at("metric").get<std::string>(),
                        row.at("value").get<double>()});
    }
    r.details = j.at("details");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("report: ") + e.what());
  }
}

std::string report_to_csv(const Report& report) {
  std::string out = "level,metric,value\n";
  for (const ReportRow& r : report.rows) {
    out += r.level + "," + r.metric + "," + nlohmann::json(r.value).dump() + "\n";
  }
  return out;
}

void write_report(const Report& report, const fs::path& stem) {
  fs::path json = stem, csv = stem;
  json += ".json";
  csv += ".csv";
  write_file_atomic(json, report_to_json(report));
  write_file_atomic(csv, report_to_csv(report));
}

Report read_report(const fs::path& json_path) { return report_from_json(read_file(json_path)); }

}  // namespace fastcf
