#pragma once

#include <ostream>

namespace dmlganr {

/// Entry point of the `dmlganr` tool. Returns 0 on success, 1 for
/// validation, parse and usage errors, 2 for runtime and numeric errors.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dmlganr
