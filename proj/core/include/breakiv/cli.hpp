#pragma once

namespace breakiv {

// Entry point for the breakiv command line tool. Returns the process exit
// code: 0 on success, 2 on validation/usage failures, 3 on numerical
// failures.
int run_cli(int argc, const char* const* argv);

}  // namespace breakiv
