#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dcl4kt {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitInput = 2,
  kExitMissingArtifact = 3,
  kExitDivergence = 4,
};

/// Entry point of the dcl4kt tool. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dcl4kt
