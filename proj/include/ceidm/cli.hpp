#pragma once

#include <string>
#include <vector>

namespace ceidm::cli {

// Exit codes: 0 success, 1 usage, 2 validation, 3 IO/transport,
// 4 numeric-domain.
int run(const std::vector<std::string>& args);
int run(int argc, const char* const* argv);

}  // namespace ceidm::cli
