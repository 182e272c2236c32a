#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace fovsteg {

struct CommandResult {
  int exit_code = 0;
  std::string message;
  std::vector<std::filesystem::path> artifacts;
};

/// Runs one `fovsteg <command> ...` invocation. Normal output goes to `out`,
/// diagnostics to `err`. Returns the process exit code: 0 success, 1 usage,
/// 2 data, 3 model mismatch, 4 runtime failure.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace fovsteg
