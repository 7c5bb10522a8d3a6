#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mutarjem::cli {

/// Runs one command line (without the program name). Results go to `out`,
/// diagnostics and errors to `err`. Returns the process exit status.
int run(std::vector<std::string> args, std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace mutarjem::cli
