#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dsmm::cli {

enum ExitCode : int {
  kOk = 0,
  kInvalidInput = 1,    // bad config, flags, geometry or file format
  kUnreadableData = 2,  // missing or unreadable inputs, failed writes
  kNonFiniteLoss = 3,
  kGradcheckFailed = 4,
};

// Entry point shared by the `dsmm` executable and the tests. args[0] is the
// program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Keeps large scratch buffers on the heap instead of fresh mmap pages; the
// conv workspaces are reallocated every step. No-op outside glibc.
void tune_allocator();

}  // namespace dsmm::cli
