#ifndef MRP_CLI_HPP
#define MRP_CLI_HPP

// The `mrp` command line: gen-data, train, eval, diagnose, report.
//
// Exit codes are the same for every subcommand: 0 success, 1 runtime
// failure (unreadable data, dimension mismatch, failed gradient check),
// 2 usage or configuration error. Nothing is written outside --out.

#include <iosfwd>

namespace mrp::cli {

inline constexpr int kOk = 0;
inline constexpr int kRuntimeError = 1;
inline constexpr int kUsageError = 2;

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mrp::cli

#endif  // MRP_CLI_HPP
