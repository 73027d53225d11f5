#pragma once

#include <ostream>

namespace sqlsynth {

// Entry point of the `sqlsynth` binary. Returns 0 on success, 1 on a runtime
// failure (a JSON error object goes to `err`) and 2 on a usage error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace sqlsynth
