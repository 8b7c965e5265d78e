// Copyright 2026 The fastcf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace fastcf {

/// Runs one CLI invocation; `args` excludes the program name. Returns 0 on
/// success, 2 on usage errors and 1 on any other failure, in which case a
/// single line "error: <kind>: <message>" goes to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fastcf
