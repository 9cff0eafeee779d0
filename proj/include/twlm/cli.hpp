// CLI dispatch shared by the twlm binary and the integration tests.
#pragma once

#include <string>
#include <vector>

namespace twlm {

// Runs one subcommand.  Exit codes: 0 success, 1 usage error, 2 data error,
// 3 numeric error.  Diagnostics go to stderr, results to files or stdout.
int dispatch(const std::vector<std::string>& args);

}  // namespace twlm
