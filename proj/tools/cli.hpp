#pragma once

namespace pertrender::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitUsage = 2;

/// Entry point of the command-line tool; returns the process exit code.
int run(int argc, const char* const* argv);

}  // namespace pertrender::cli
