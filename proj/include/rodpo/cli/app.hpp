#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace rodpo::cli {

/// Exit codes: 0 success, 1 runtime or training failure, 2 usage or
/// configuration error.
enum ExitCode { ok = 0, failure = 1, usage = 2 };

/// Runs one command line (arguments after the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace rodpo::cli
