#pragma once

#include <string>
#include <vector>

namespace gttt::cli {

// Entry point behind the gttt binary; args exclude the program name.
// Exit codes: 0 success, 1 runtime failure, 2 config/validation error.
int run_cli(const std::vector<std::string>& args);

}  // namespace gttt::cli
