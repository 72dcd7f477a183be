#pragma once

// Batch entry points. Exit codes: 0 ok, 1 usage, 2 data/validation,
// 3 numerical.

#include <ostream>

namespace textcav {

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace textcav
