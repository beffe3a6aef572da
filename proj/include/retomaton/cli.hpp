#pragma once

#include <string>
#include <vector>

namespace retomaton {

/// Runs the full command-line interface. Returns the process exit code:
/// 0 success, 1 usage error, 2 data error, 3 internal error.
int cli_main(int argc, const char* const* argv);
int cli_main(const std::vector<std::string>& args);

}  // namespace retomaton
