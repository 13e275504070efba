#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace attenmia::cli {

// Parses `args` (without the program name), runs the subcommand, and returns
// the process exit status: 0 success, 2 input/format error, 3 invariant
// violation in data, 4 internal error. Failures print one line
// "error: <Category>: <message>" to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace attenmia::cli
