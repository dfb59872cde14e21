#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace vskel {

struct GradCheckResult {
  std::string check;  // "<layer or loss>/<wrt>"
  unsigned seed = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// Central-difference checks of every layer and loss backward rule, each on
/// `seeds` random draws. Small tensors; runs in seconds.
std::vector<GradCheckResult> run_gradcheck_suite(unsigned seeds = 10, double tolerance = 1e-4,
                                                 double step = 1e-5);

struct GradCheckLine {
  std::string check;
  double worst_rel_error = 0.0;
  unsigned worst_seed = 0;
  std::size_t failures = 0;
};

/// Per-check worst error over seeds, in suite order.
std::vector<GradCheckLine> summarize(const std::vector<GradCheckResult>& results);

}  // namespace vskel
