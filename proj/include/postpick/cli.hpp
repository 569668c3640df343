#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace postpick::cli {

/// Runs one subcommand. Returns 0 on success, 1 on a runtime failure (the
/// message names the failing stage), 2 on a usage error.
/// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace postpick::cli
