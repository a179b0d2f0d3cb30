// SPDX-License-Identifier: Apache-2.0
#include "vcd/schedule.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "vcd/error.hpp"

namespace vcd {

void NoiseSchedule::check_step(int t) const {
  if (t < 1 || t > T) throw ParameterError("step " + std::to_string(t) + " outside [1, " + std::to_string(T) + "]");
}

NoiseSchedule build_cosine_schedule(int T, double offset) {
  if (T < 1) throw ParameterError("schedule length must be positive");
  if (!(offset > 0.0)) throw ParameterError("cosine schedule offset must be positive");
  auto f = [&](int t) {
    const double c = std::cos((static_cast<double>(t) / T + offset) / (1.0 + offset) * std::numbers::pi / 2.0);
    return c * c;
  };
  const double f0 = f(0);
  std::vector<double> beta(static_cast<std::size_t>(T) + 1, 0.0);
  for (int t = 1; t <= T; ++t) {
    const double b = 1.0 - (f(t) / f0) / (f(t - 1) / f0);
    beta[t] = std::min(b, 0.999);
  }
  return schedule_from_betas(std::move(beta), offset);
}

NoiseSchedule schedule_from_betas(std::vector<double> beta, double offset) {
  if (beta.size() < 2) throw ParameterError("schedule needs at least one step");
  NoiseSchedule s;
  s.T = static_cast<int>(beta.size()) - 1;
  s.offset = offset;
  s.beta = std::move(beta);
  s.beta[0] = 0.0;
  s.alpha.assign(s.beta.size(), 1.0);
  s.alpha_bar.assign(s.beta.size(), 1.0);
  for (int t = 1; t <= s.T; ++t) {
    s.alpha[t] = 1.0 - s.beta[t];
    s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
  }
  validate_schedule(s);
  return s;
}

void validate_schedule(const NoiseSchedule& s) {
  if (s.alpha_bar.empty() || s.alpha_bar[0] != 1.0) throw NumericError("alpha_bar[0] must be 1");
  for (int t = 1; t <= s.T; ++t) {
    if (!(s.beta[t] > 0.0 && s.beta[t] <= 0.999)) {
      throw NumericError("beta_" + std::to_string(t) + " outside (0, 0.999]");
    }
    if (!(s.alpha_bar[t] < s.alpha_bar[t - 1] && s.alpha_bar[t] > 0.0)) {
      throw NumericError("alpha_bar not strictly decreasing at step " + std::to_string(t));
    }
  }
}

SubSchedule subsequence_from_steps(std::vector<int> steps, const NoiseSchedule& sched) {
  if (steps.empty()) throw ParameterError("subsequence needs at least one step");
  SubSchedule sub;
  sub.K = static_cast<int>(steps.size());
  sub.S = std::move(steps);
  for (std::size_t k = 0; k < sub.S.size(); ++k) {
    sched.check_step(sub.S[k]);
    if (k > 0 && sub.S[k] <= sub.S[k - 1]) throw ParameterError("subsequence steps must be strictly increasing");
  }
  double prev_bar = 1.0;
  for (int k = 0; k < sub.K; ++k) {
    const double bar = sched.alpha_bar[sub.S[k]];
    const double a = k == 0 ? bar : bar / prev_bar;
    const double var = (1.0 - prev_bar) / (1.0 - bar) * (1.0 - a);
    sub.alpha_sub.push_back(a);
    sub.alpha_bar_sub.push_back(bar);
    sub.sigma_sub.push_back(std::sqrt(std::max(var, 0.0)));
    prev_bar = bar;
  }
  return sub;
}

SubSchedule build_subsequence(int K, int s_first, int s_last, const NoiseSchedule& sched, Spacing spacing) {
  if (K < 1) throw ParameterError("K must be at least 1");
  if (s_first < 1 || s_first > s_last || s_last > sched.T) {
    throw ParameterError("subsequence endpoints must satisfy 1 <= S_1 <= S_K <= T");
  }
  if (K > s_last - s_first + 1) {
    throw ParameterError("K = " + std::to_string(K) + " exceeds the " + std::to_string(s_last - s_first + 1) +
                         " available steps");
  }
  std::vector<int> steps;
  switch (spacing) {
    case Spacing::linear:
      for (int k = 0; k < K; ++k) {
        if (K == 1) {
          steps.push_back(s_last);
          break;
        }
        const double pos = s_first + static_cast<double>(s_last - s_first) * k / (K - 1);
        // Halves round toward the lower index.
        int idx = static_cast<int>(std::ceil(pos - 0.5));
        if (!steps.empty() && idx <= steps.back()) idx = steps.back() + 1;
        steps.push_back(idx);
      }
      break;
  }
  return subsequence_from_steps(std::move(steps), sched);
}

namespace {
void check_shapes(const Tensor& a, const Tensor& b, const char* where) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(where) + ": shape " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

Tensor combine(const Tensor& x, double a, const Tensor& y, double b) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = a * x[i] + b * y[i];
  return out;
}
}  // namespace

Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched) {
  sched.check_step(t);
  check_shapes(x0, eps, "forward_diffuse");
  const double ab = sched.alpha_bar[t];
  return combine(x0, std::sqrt(ab), eps, std::sqrt(1.0 - ab));
}

Tensor one_step_diffuse(const Tensor& x_prev, int t, const Tensor& z, const NoiseSchedule& sched) {
  sched.check_step(t);
  check_shapes(x_prev, z, "one_step_diffuse");
  return combine(x_prev, std::sqrt(sched.alpha[t]), z, std::sqrt(sched.beta[t]));
}

double posterior_sigma(int t, const NoiseSchedule& sched) {
  sched.check_step(t);
  const double var = (1.0 - sched.alpha_bar[t - 1]) / (1.0 - sched.alpha_bar[t]) * sched.beta[t];
  return std::sqrt(std::max(var, 0.0));
}

DenoiseCoefficients denoise_coefficients(const SubSchedule& sub, int k) {
  if (k < 1 || k > sub.K) throw ParameterError("reverse step index outside [1, K]");
  const double a = sub.alpha_sub[k - 1];
  const double ab = sub.alpha_bar_sub[k - 1];
  return {1.0 / std::sqrt(a), (1.0 - a) / (std::sqrt(a) * std::sqrt(1.0 - ab))};
}

Tensor denoise_mean(const Tensor& x, const Tensor& eps_hat, const SubSchedule& sub, int k) {
  check_shapes(x, eps_hat, "denoise_mean");
  const auto c = denoise_coefficients(sub, k);
  return combine(x, c.a, eps_hat, -c.b);
}

Tensor reverse_step(const Tensor& x, int k, const Tensor& eps_hat, const Tensor& z, const SubSchedule& sub) {
  check_shapes(x, z, "reverse_step");
  if (k == 1) {
    for (double v : z.values())
      if (v != 0.0) throw ContractViolation("the final reverse step must be noiseless (z = 0)");
  }
  Tensor mu = denoise_mean(x, eps_hat, sub, k);
  const double sigma = sub.sigma_sub[k - 1];
  if (sigma == 0.0) return mu;
  for (std::size_t i = 0; i < mu.size(); ++i) mu[i] += sigma * z[i];
  return mu;
}

DenoiseCoefficients x0_prediction_coefficients(int t, const NoiseSchedule& sched) {
  sched.check_step(t);
  const double ab = sched.alpha_bar[t];
  return {1.0 / std::sqrt(ab), std::sqrt(1.0 - ab) / std::sqrt(ab)};
}

DenoiseCoefficients posterior_mean_coefficients(int t, const NoiseSchedule& sched) {
  sched.check_step(t);
  const double a = sched.alpha[t];
  return {1.0 / std::sqrt(a), sched.beta[t] / (std::sqrt(a) * std::sqrt(1.0 - sched.alpha_bar[t]))};
}

}  // namespace vcd
