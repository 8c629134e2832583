#pragma once

#include <string>
#include <vector>

namespace prefopt {

// Entry point behind the prefopt binary. args excludes the program name.
// Returns 0 on success, 1 on usage/validation errors, 2 on numerical
// failures (a gradcheck exceeding its tolerance).
int run_command(const std::vector<std::string>& args);

} // namespace prefopt
