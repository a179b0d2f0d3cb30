// SPDX-License-Identifier: Apache-2.0
#include "vcd/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "vcd/error.hpp"

namespace vcd {

namespace {
struct Eval {
  double loss;
  std::uint64_t kinks;
};

Eval evaluate(const std::function<ad::Var()>& loss_fn) {
  ad::NoGradGuard guard;
  ad::KinkTrace trace;
  const double loss = loss_fn().item();
  if (!std::isfinite(loss)) throw NumericError("non-finite loss during gradient check");
  return {loss, trace.digest()};
}
}  // namespace

GradCheckResult grad_check(const std::function<ad::Var()>& loss_fn,
                           const std::vector<std::pair<std::string, ad::Var>>& params, double epsilon,
                           std::size_t max_per_param) {
  for (const auto& [_, p] : params) const_cast<ad::Var&>(p).zero_grad();
  std::uint64_t base_kinks = 0;
  {
    ad::KinkTrace trace;
    ad::Var loss = loss_fn();
    if (!std::isfinite(loss.item())) throw NumericError("non-finite loss during gradient check");
    base_kinks = trace.digest();
    loss.backward();
  }
  GradCheckResult res;
  for (const auto& [name, p_const] : params) {
    ad::Var p = p_const;
    const std::size_t n = p.size();
    const std::size_t count = max_per_param == 0 ? n : std::min(n, max_per_param);
    const Tensor analytic = p.has_grad() ? p.grad() : Tensor(p.shape());
    for (std::size_t j = 0; j < count; ++j) {
      const std::size_t i = count == n ? j : j * n / count;
      double& w = p.mutable_value()[i];
      const double saved = w;
      Eval probe[4];
      const double offsets[4] = {2.0, 1.0, -1.0, -2.0};
      bool crossed = false;
      for (int k = 0; k < 4; ++k) {
        w = saved + offsets[k] * epsilon;
        probe[k] = evaluate(loss_fn);
        crossed = crossed || probe[k].kinks != base_kinks;
      }
      w = saved;
      if (crossed) {
        ++res.skipped;
        continue;
      }
      const double numeric =
          (-probe[0].loss + 8.0 * probe[1].loss - 8.0 * probe[2].loss + probe[3].loss) / (12.0 * epsilon);
      const double a = analytic[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
      ++res.checked;
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return res;
}

}  // namespace vcd
