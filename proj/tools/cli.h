#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace tbfp::cli {

/// Exit codes.
inline constexpr int kOk = 0;
/// Runtime failure, or a `compare` tolerance exceeded.
inline constexpr int kFailure = 1;
/// Bad flags, config or input.
inline constexpr int kUsage = 2;

/// Runs the `tbfp` command line; `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tbfp::cli
