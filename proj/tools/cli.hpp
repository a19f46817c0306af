#pragma once

namespace graphstore::cli {

// Exit statuses.
inline constexpr int kOk = 0;
inline constexpr int kDomainError = 1;
inline constexpr int kUsage = 2;
inline constexpr int kCorruption = 3;
inline constexpr int kIoError = 4;

int run_cli(int argc, char** argv);

}  // namespace graphstore::cli
