#pragma once

// ha_array command line: fit, simulate, diagnose, rerun.
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <ostream>
#include <string>
#include <vector>

namespace ha::cli {

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ha::cli
