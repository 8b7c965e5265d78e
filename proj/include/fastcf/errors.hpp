// Copyright 2026 The fastcf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace fastcf {

// Every error raised by the library derives from Error so that the CLI can
// print a single machine-parseable line: "error: <kind>: <message>".
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define FASTCF_DEFINE_ERROR(Name, tag)                                    \
  class Name : public Error {                                             \
   public:                                                                \
    explicit Name(const std::string& message) : Error(tag, message) {}    \
  }

FASTCF_DEFINE_ERROR(ShapeError, "shape");
FASTCF_DEFINE_ERROR(IndexError, "index");
FASTCF_DEFINE_ERROR(ParameterError, "parameter");
FASTCF_DEFINE_ERROR(ConfigError, "config");
FASTCF_DEFINE_ERROR(ContractError, "contract");
FASTCF_DEFINE_ERROR(SingularityError, "singularity");
FASTCF_DEFINE_ERROR(NumericError, "numeric");
FASTCF_DEFINE_ERROR(ResourceError, "resource");
FASTCF_DEFINE_ERROR(UndefinedMetricError, "undefined-metric");
FASTCF_DEFINE_ERROR(IoError, "io");
FASTCF_DEFINE_ERROR(FormatError, "format");
FASTCF_DEFINE_ERROR(VersionError, "version");
FASTCF_DEFINE_ERROR(CorruptionError, "corruption");
FASTCF_DEFINE_ERROR(ParseError, "parse");

#undef FASTCF_DEFINE_ERROR

}  // namespace fastcf
