#pragma once

#include <ostream>

namespace cbpf {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitRuntime = 2,
  kExitBudget = 3,
};

/// Entry point of the `cbpf` command-line tool. Data go to files under the
/// output directory or to `out`; diagnostics go to `err`.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int cli_main(int argc, const char* const* argv);

}  // namespace cbpf
