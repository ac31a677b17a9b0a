#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace htk::cli {

/// Exit codes: 0 success, 1 usage error, 2 data error, 3 backend error.
int run(int argc, char** argv);

/// Same as the binary, with `args` excluding the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace htk::cli
