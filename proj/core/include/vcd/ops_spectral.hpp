// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "vcd/autograd.hpp"

namespace vcd::ad {

// Differentiable centred STFT magnitude with a periodic Hann window of
// length n_fft: x[B, N] -> [B, n_fft / 2 + 1, 1 + N / hop], computed as
// sqrt(re^2 + im^2 + eps).
Var stft_magnitude(const Var& x, int n_fft, int hop, double eps = 1e-9);

}  // namespace vcd::ad
