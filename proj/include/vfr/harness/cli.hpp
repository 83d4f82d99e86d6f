#pragma once

#include <iosfwd>

namespace vfr {

// Exit codes: 0 success, 1 a check failed (gradcheck), 2 usage or
// configuration error, 3 unreadable or malformed input files, 4 any other
// library error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace vfr
