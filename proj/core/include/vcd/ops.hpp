// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "vcd/autograd.hpp"

// Differentiable operations. Layout conventions: sequences are
// [batch, channels, time]; dense layers take [batch, features].
namespace vcd::ad {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
// alpha * a + beta * b
Var affine(const Var& a, double alpha, const Var& b, double beta);
// a[i, ...] * coeff[i] along the leading axis.
Var scale_batch(const Var& a, std::span<const double> coeff);

Var abs(const Var& a);
Var square(const Var& a);
Var sqrt(const Var& a);
Var log(const Var& a);
Var exp(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var silu(const Var& a);
Var leaky_relu(const Var& a, double slope);
// Gated linear unit over the channel axis: [B, 2C, T] -> [B, C, T].
Var glu(const Var& x);

Var sum(const Var& a);
Var mean(const Var& a);
// mean |a - b|
Var l1_loss(const Var& a, const Var& b);

Var reshape(const Var& a, Shape shape);
Var slice(const Var& a, int axis, int begin, int end);
Var concat(const std::vector<Var>& parts, int axis);

enum class PadMode { zero, reflect, edge, circular };
Var pad_time(const Var& x, int left, int right, PadMode mode);

// x[B, I] * w[O, I]^T + b[O]; b may be undefined.
Var linear(const Var& x, const Var& w, const Var& b);
// x[B, C, T] + y[B, C] broadcast over time.
Var add_time_broadcast(const Var& x, const Var& y);
// x[B, C, T] + b[C]
Var add_channel_bias(const Var& x, const Var& b);
Var avg_pool_time(const Var& x, int factor);
// [B, C, T] -> [B, 2C]: per-channel mean then standard deviation.
Var mean_std_pool(const Var& x, double eps = 1e-5);
Var mean_pool_time(const Var& x);
Var l2_normalize_rows(const Var& x, double eps = 1e-8);
// w[o, ...] = g[o] * v[o, ...] / ||v[o, ...]||
Var weight_norm(const Var& v, const Var& g);

// logits [N, C]; mean negative log-likelihood. Labels < 0 are ignored.
Var softmax_cross_entropy(const Var& logits, std::span<const int> labels);
// logits [B, C, T]; labels indexed b * T + t.
Var frame_cross_entropy(const Var& logits, std::span<const int> labels);

}  // namespace vcd::ad
