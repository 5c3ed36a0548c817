#pragma once

#include <iosfwd>

namespace lktcn::cli {

/// Process exit codes.
enum Exit : int {
  kOk = 0,
  kCheckFailed = 1,  // gradcheck or bench limit violated, or an unexpected error
  kUsage = 2,        // bad flags, bad config, missing or malformed input data
  kDiverged = 3,
  kIo = 4,
};

/// Entry point behind the `lktcn` executable. Subcommands: train, eval,
/// predict, gradcheck, bench.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace lktcn::cli
