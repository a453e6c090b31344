#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace neuform::cli {

/// Runs the command line `args` (without the program name). Returns the exit
/// code: 0 success, 1 usage, 2 data error, 3 numeric failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace neuform::cli
