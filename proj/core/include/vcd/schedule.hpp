// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "vcd/tensor.hpp"

namespace vcd {

// Tables indexed by step t in [1, T]; index 0 of beta/alpha is unused (zero / one).
struct NoiseSchedule {
  int T = 0;
  double offset = 0.0;
  std::vector<double> beta;       // size T + 1
  std::vector<double> alpha;      // size T + 1
  std::vector<double> alpha_bar;  // size T + 1, alpha_bar[0] == 1

  void check_step(int t) const;
};

NoiseSchedule build_cosine_schedule(int T, double offset = 0.008);
// Rebuilds from stored betas so a checkpoint reproduces the tables bit for bit.
NoiseSchedule schedule_from_betas(std::vector<double> beta, double offset);
void validate_schedule(const NoiseSchedule& sched);

// Reverse ladder S_1 < ... < S_K. Vectors are 0-based: element k - 1 holds step k.
struct SubSchedule {
  int K = 0;
  std::vector<int> S;
  std::vector<double> alpha_sub;
  std::vector<double> alpha_bar_sub;
  std::vector<double> sigma_sub;
};

enum class Spacing { linear };

// K == 1 uses S_K alone.
SubSchedule build_subsequence(int K, int s_first, int s_last, const NoiseSchedule& sched,
                              Spacing spacing = Spacing::linear);
// Explicit ladder; indices must be strictly increasing within [1, T].
SubSchedule subsequence_from_steps(std::vector<int> steps, const NoiseSchedule& sched);

Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched);
Tensor one_step_diffuse(const Tensor& x_prev, int t, const Tensor& z, const NoiseSchedule& sched);
double posterior_sigma(int t, const NoiseSchedule& sched);

// Coefficients of mu = a * x - b * eps_hat for step k (1-based).
struct DenoiseCoefficients {
  double a = 0.0;
  double b = 0.0;
};
DenoiseCoefficients denoise_coefficients(const SubSchedule& sub, int k);

Tensor denoise_mean(const Tensor& x, const Tensor& eps_hat, const SubSchedule& sub, int k);
// Throws ContractViolation when k == 1 and z is not identically zero.
Tensor reverse_step(const Tensor& x, int k, const Tensor& eps_hat, const Tensor& z, const SubSchedule& sub);

// Teacher one-step estimates at raw step t.
DenoiseCoefficients x0_prediction_coefficients(int t, const NoiseSchedule& sched);
DenoiseCoefficients posterior_mean_coefficients(int t, const NoiseSchedule& sched);

}  // namespace vcd
