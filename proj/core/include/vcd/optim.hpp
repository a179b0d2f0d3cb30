// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "vcd/autograd.hpp"

namespace vcd::nn {

struct AdamOptions {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Global gradient-norm clip; 0 disables.
  double clip_norm = 0.0;
};

class Adam {
 public:
  Adam(std::vector<ad::Var> params, AdamOptions options);

  // Parameters without an accumulated gradient are left untouched.
  void step();
  void zero_grad();
  long steps() const noexcept { return t_; }
  const AdamOptions& options() const noexcept { return opt_; }
  // Norm of the last step's gradient before clipping.
  double last_grad_norm() const noexcept { return last_norm_; }

 private:
  std::vector<ad::Var> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamOptions opt_;
  long t_ = 0;
  double last_norm_ = 0.0;
};

}  // namespace vcd::nn
