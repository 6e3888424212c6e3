#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace sgdet::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kNumericError = 3 };

/// Runs one subcommand (synth, train, infer, eval, export-graph). Errors are
/// reported on `err` and mapped to an ExitCode; nothing throws.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace sgdet::cli
