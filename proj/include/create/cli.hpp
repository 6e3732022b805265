#pragma once

#include <string>
#include <vector>

namespace create {

/// Entry point behind the `create` binary; args exclude the program name.
/// Exit codes: 0 success, 1 runtime failure, 2 configuration error.
int run_cli(const std::vector<std::string>& args);

}  // namespace create
