// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mtn::cli {

/// Exit codes shared by every subcommand.
enum ExitCode : int { ok = 0, config_error = 1, numeric_failure = 2, io_error = 3 };

/// Runs one subcommand. `args` excludes the program name.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mtn::cli
