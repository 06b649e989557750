#pragma once

#include <string>
#include <vector>

namespace ppsvae {

enum ExitCode : int { kExitOk = 0, kExitUsage = 2, kExitNumeric = 3, kExitCheckpoint = 4 };

/// Runs one `ppsvae <command> ...` invocation and returns its exit code.
/// Errors are reported on stderr; nothing escapes as an exception.
int run_cli(const std::vector<std::string>& args);
int run_cli(int argc, char** argv);

}  // namespace ppsvae
