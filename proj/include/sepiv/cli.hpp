#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace sepiv {

// Runs one command line (args excludes the program name). Results go to
// `out` unless --out names a file; errors go to `err` as a JSON object
// {"error": <code name>, "message": ...}. Returns 0, 2 (validation) or
// 3 (numerical failure).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sepiv
