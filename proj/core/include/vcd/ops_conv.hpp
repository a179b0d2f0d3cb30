// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "vcd/autograd.hpp"

namespace vcd::ad {

struct Conv1dOptions {
  int stride = 1;
  int padding_left = 0;
  int padding_right = 0;
  int dilation = 1;
};

// x[B, Ci, T], w[Co, Ci, K], b[Co] (optional) -> [B, Co, To] with
// To = (T + pl + pr - dilation * (K - 1) - 1) / stride + 1. Zero padding.
Var conv1d(const Var& x, const Var& w, const Var& b, const Conv1dOptions& opt);

int conv1d_output_length(int length, int kernel, const Conv1dOptions& opt);

// x[B, Ci, T], w[Ci, Co, K], b[Co] (optional) -> [B, Co, (T - 1) * stride - 2 * padding + K]
Var conv_transpose1d(const Var& x, const Var& w, const Var& b, int stride, int padding);

}  // namespace vcd::ad
