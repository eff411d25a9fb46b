// Copyright 2026 The KVPO Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace kvpo::cli {

enum ExitCode : int {
  kOk = 0,
  kConfigError = 1,
  kCheckFailure = 2,
  kRuntimeError = 3,
};

/// Entry point shared by the binary and the tests. `args` excludes argv[0].
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace kvpo::cli
