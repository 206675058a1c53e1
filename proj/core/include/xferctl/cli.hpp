#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace xferctl::cli {

// Full command-line front end (subcommands: simulate, identify, transfer,
// train, evaluate, reproduce). Returns the process exit status; errors print
// a one-line cause to `err` and leave no partial artifacts behind.
int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err);

}  // namespace xferctl::cli
