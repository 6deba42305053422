#pragma once

#include <iosfwd>

namespace greybox {

/// Exit codes: 0 success, 1 configuration or usage error, 2 numerical failure.
enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitNumerical = 2 };

/// Runs one subcommand: identify, gradcheck, certify, bench, gen-data, diagnose.
/// Errors are reported as JSON on err.
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int dispatch(int argc, const char* const* argv);

}  // namespace greybox
