#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace gfn::cli {

// args excludes the program name. Exit codes: 0 ok, 2 validation/usage error, 1 runtime error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

std::string version_string();

}  // namespace gfn::cli
