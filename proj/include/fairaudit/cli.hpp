#pragma once

#include <string>
#include <vector>

namespace fairaudit::cli {

/// Entry point behind main(): subcommands validate | score | power | audit |
/// regress | synth. Returns 0 on success, 1 on input/validation errors,
/// 2 on internal errors. All file outputs are written atomically.
int run(const std::vector<std::string>& args);
int run(int argc, char** argv);

}  // namespace fairaudit::cli
