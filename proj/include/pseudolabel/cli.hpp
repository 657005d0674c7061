#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace pseudolabel {

// Exit codes: 0 success, 1 runtime failure (IO, format, data), 2 usage or
// configuration error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

// `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace pseudolabel
