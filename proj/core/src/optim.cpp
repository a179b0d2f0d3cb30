// SPDX-License-Identifier: Apache-2.0
#include "vcd/optim.hpp"

#include <cmath>

#include "vcd/error.hpp"

namespace vcd::nn {

Adam::Adam(std::vector<ad::Var> params, AdamOptions options) : params_(std::move(params)), opt_(options) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Adam::step() {
  double sq = 0.0;
  for (const auto& p : params_)
    if (p.has_grad())
      for (double g : p.grad().values()) sq += g * g;
  last_norm_ = std::sqrt(sq);
  if (!std::isfinite(last_norm_)) throw NumericError("non-finite gradient norm");
  const double clip = (opt_.clip_norm > 0.0 && last_norm_ > opt_.clip_norm) ? opt_.clip_norm / last_norm_ : 1.0;

  ++t_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    ad::Var& p = params_[k];
    if (!p.has_grad() || !p.requires_grad()) continue;
    auto& m = m_[k];
    auto& v = v_[k];
    const Tensor& g = p.grad();
    Tensor& w = p.mutable_value();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i] * clip;
      m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * gi;
      v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * gi * gi;
      w[i] -= opt_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + opt_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace vcd::nn
