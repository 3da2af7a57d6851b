#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "lantern/tape.hpp"
#include "lantern/tensor.hpp"

namespace lantern::ad {

// Builds the scalar objective from the current values of the checked params.
// Must be deterministic across calls (run stochastic ops in eval mode or with
// frozen masks) because it is re-evaluated ~2x per parameter element.
using Program = std::function<Tensor(Tape&)>;

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  bool flagged = false;
};

struct GradCheckReport {
  double eps = 0.0;
  double tol = 0.0;
  std::vector<GradCheckEntry> entries;

  bool ok() const;
  double worst() const;
  std::string summary() const;
};

// Relative error |g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8) per element,
// reduced by max over each named parameter.
GradCheckReport grad_check(const Program& f,
                           const std::vector<std::pair<std::string, Tensor>>& params,
                           double eps = 1e-5, double tol = 1e-4);

}  // namespace lantern::ad
