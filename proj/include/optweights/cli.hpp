#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace optw {

/// Entry point behind the `optweights` executable. Returns the process exit
/// code: 0 on success, 1 for invalid input, 2 for numerical failures.
/// Errors are written to `err` as a single line `error[Kind]: message`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Same, for an argument list without the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Grid syntax shared by the flags that take one: `a,b,c` lists values,
/// `lo:hi:k` gives k points. `log_grid` spaces points geometrically and also
/// accepts `lo:hi`, meaning lo, 10 lo, 100 lo, ... up to hi.
std::vector<double> parse_log_grid(const std::string& text);
std::vector<double> parse_linear_grid(const std::string& text);

}  // namespace optw
