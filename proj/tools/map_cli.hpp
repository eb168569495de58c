#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace hmap::cli {

/// Process exit codes.
enum ExitCode : int {
  kOk = 0,
  kUsage = 1,    // bad flags, bad config, malformed input
  kData = 2,     // file IO, archive/checkpoint decoding, incompatible checkpoints
  kNumeric = 3,  // non-finite values, degenerate masks, too many skipped steps
};

/// Runs one command. Results go to `out`, logfmt event lines to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace hmap::cli
