// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "vcd/autograd.hpp"

namespace vcd {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  // Probes whose +/- eps evaluations crossed a kink of abs or leaky_relu.
  std::size_t skipped = 0;
  std::string worst;
};

// Fourth-order central differences (stencil +-h, +-2h) against the reverse-mode gradient of `loss_fn` for every
// entry of `params` (or an evenly strided subset of `max_per_param` entries).
// Relative error is |a - n| / max(|a|, |n|, 1e-6).
GradCheckResult grad_check(const std::function<ad::Var()>& loss_fn,
                           const std::vector<std::pair<std::string, ad::Var>>& params, double epsilon = 1e-4,
                           std::size_t max_per_param = 0);

}  // namespace vcd
