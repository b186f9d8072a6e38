#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace lprobe::cli {

/// Exit codes: 0 success, 1 data or validation failure, 2 usage error.
enum ExitCode : int { kOk = 0, kDataError = 1, kUsageError = 2 };

int run(int argc, char** argv);

/// Same as run(argc, argv) with args[0] the program name; output goes to the
/// given streams.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace lprobe::cli
