#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace endx {

/// Parses and executes one command line. `args` holds the arguments without
/// the program name. Machine-readable JSON goes to `out`; human-readable
/// progress, warnings, and error messages go to `err`.
///
/// Exit codes: 0 success, 2 usage error, 1 runtime failure.
int run_cli(std::vector<std::string> args, std::ostream& out,
            std::ostream& err);

}  // namespace endx
