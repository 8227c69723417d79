#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace asal::cli {

// Dispatches one harness invocation. `args` excludes the program name.
// Human-readable output goes to `out`, diagnostics to `err`. Returns the
// process exit code: 0 success, 1 validation error (flags, configuration,
// or inputs), 2 runtime failure.
int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err);

}  // namespace asal::cli
