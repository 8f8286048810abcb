#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace towl::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

/// Entry point of the `towl` executable. Reports go to `out`, diagnostics to
/// `err`. Returns the process exit status.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace towl::cli
