#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace lvreg {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

/// Entry point of the `lvreg` tool. `args` excludes the program name.
/// Commands: synth, deform, analyze. Returns the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Default worker count: $LVREG_JOBS if set, else 1.
int default_jobs();

}  // namespace lvreg
