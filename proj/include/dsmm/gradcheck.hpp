#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dsmm/reconstruction.hpp"

namespace dsmm {

struct GradcheckOptions {
  Index block_size = 8;
  double sampling_ratio = 0.25;
  double alpha = 0.5;
  Index features = kDefaultFeatures;
  double eps = 1e-6;
  double tolerance = 1e-5;
  // Negative control: perturbs the analytic conv2 gradient before comparing.
  bool corrupt_backward = false;
};

struct GroupError {
  std::string group;
  double relative_error = 0.0;
};

struct GradcheckReport {
  std::vector<GroupError> groups;  // "phi" first, then reconstruction tensors
  GroupError worst;
  bool passed = false;
};

// End-to-end check of the loss 1/2 ||g(x) - x||^2 on a single B x B block:
// analytic gradients w.r.t. the constrained sampling kernels and every
// reconstruction tensor against central differences of the same loss.
GradcheckReport run_gradcheck(std::uint64_t seed, const GradcheckOptions& options = {});

}  // namespace dsmm
