#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace nlskit::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

/// Runs one subcommand. `args` excludes the program name. Help and reports
/// go to `out`; usage errors and diagnostics go to `err`.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace nlskit::cli
