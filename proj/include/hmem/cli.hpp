#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace hmem::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumeric = 3;

// Runs `hmem <command> ...`; args excludes the program name. Returns the
// process exit status.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hmem::cli
