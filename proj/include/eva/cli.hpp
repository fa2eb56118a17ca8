#pragma once

#include <string>
#include <vector>

namespace eva::cli {

// Exit codes: 0 success, 1 user/config error, 2 numerical failure.
int run(const std::vector<std::string>& args);
int run(int argc, const char* const* argv);

}  // namespace eva::cli
