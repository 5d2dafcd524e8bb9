#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace maskinv::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Runs one command. `args` excludes the program name. Errors are reported
/// on `err` as a single line `error: <category>: <message>`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace maskinv::cli
