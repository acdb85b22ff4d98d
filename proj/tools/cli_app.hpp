#pragma once

#include <string>
#include <vector>

namespace lbf::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

/// Runs the command-line tool on the given arguments (excluding argv[0]).
/// Returns 0 on success, 1 on usage errors, 2 on data errors.
int run(const std::vector<std::string>& args);

}  // namespace lbf::cli
