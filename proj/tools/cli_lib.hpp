#pragma once

#include <string>
#include <vector>

namespace ndthash::cli {

// Exit codes shared by every subcommand.
inline constexpr int kOk = 0;
inline constexpr int kCheckFailed = 1;
inline constexpr int kUsageError = 2;
inline constexpr int kDiverged = 3;

// Runs one CLI invocation (args exclude the program name). All output goes to
// the given streams, so tests can drive commands in-process.
int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err);

}  // namespace ndthash::cli
