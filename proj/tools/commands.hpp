#pragma once

#include <exception>
#include <ostream>
#include <string>
#include <vector>

namespace llmprice::cli {

// Exit statuses.
inline constexpr int kOk = 0;
inline constexpr int kFailure = 1;
inline constexpr int kInputError = 2;
inline constexpr int kConvergenceError = 3;
inline constexpr int kScaleError = 4;

// Runs one invocation; args exclude the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int exit_status(const std::exception& e);

}  // namespace llmprice::cli
