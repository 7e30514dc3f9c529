#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace blnet::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  // A reproduction or gradient check ran and missed its tolerance.
  kCheckFailed = 2,
};

// Runs one command; args exclude the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace blnet::cli
