#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace blindrest {

// Exit codes of run_cli.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitInvalid = 2;
inline constexpr int kExitDependency = 3;
inline constexpr int kExitIo = 4;
inline constexpr int kExitTraining = 5;

// Full command line including the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace blindrest
