#pragma once

#include <ostream>

namespace vitforge::cli {

enum class Exit : int {
  ok = 0,
  usage = 1,  // bad arguments and anything unclassified
  config = 2,
  data = 3,
  divergence = 4,
  checkpoint = 5,
  busy = 6,  // output directory locked by another process
};

/// Entry point of the `vitforge` tool; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace vitforge::cli
