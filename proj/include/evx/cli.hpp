#pragma once

#include <string>
#include <vector>

namespace evx::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // data or model error
inline constexpr int kExitUsage = 2;

// args[0] is the program name.
int run(const std::vector<std::string>& args);
int run(int argc, char** argv);

}  // namespace evx::cli
