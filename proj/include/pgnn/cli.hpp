#pragma once

#include <string>
#include <vector>

namespace pgnn::cli {

// Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);  // args without the program name

}  // namespace pgnn::cli
