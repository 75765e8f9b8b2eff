#pragma once

#include <iosfwd>
#include <span>
#include <string>

namespace kws::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

/// Runs one command line (args excludes the program name). Results go to
/// `out`, diagnostics to `err`; `in` feeds `detect --stdin`.
int run(std::span<const std::string> args, std::ostream& out, std::ostream& err, std::istream& in);

int run(int argc, char** argv);

}  // namespace kws::cli
