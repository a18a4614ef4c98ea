#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mkr::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,    // unknown command or flag, bad config value
  kData = 2,     // unreadable or inconsistent input data
  kNumeric = 3,  // non-finite value during computation
};

/// Runs one command. `args` excludes the program name: {"evaluate", "--pred", ...}.
/// Commands: synth-data, train-stage1, train-stage2, reconstruct, evaluate,
/// compare-baseline, export-slices, plot-log. See docs/formats.md.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mkr::cli
