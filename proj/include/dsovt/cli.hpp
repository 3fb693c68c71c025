#pragma once

#include <string>
#include <vector>

#include "dsovt/error.hpp"

namespace dsovt {

/// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitValidation = 3;

/// Usage errors map to 2, input and configuration errors to 3, everything
/// else (I/O, numerical failure) to 1.
int exit_code_for(ErrorKind kind);

/// Runs one subcommand; args[0] is the program name. Errors are reported as
/// a single `error: <kind>: <message>` line on stderr.
int run_cli(const std::vector<std::string>& args);

}  // namespace dsovt
