#pragma once

#include <iosfwd>

namespace msit::cli {

// exit codes: 0 success, 2 input error, 3 consistency error
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace msit::cli
