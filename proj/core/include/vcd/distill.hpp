// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "vcd/encoders.hpp"
#include "vcd/networks.hpp"
#include "vcd/optim.hpp"
#include "vcd/schedule.hpp"

namespace vcd {

// Teacher estimate x_phi at raw step t.
enum class TeacherTarget { x0_prediction, posterior_mean };
TeacherTarget parse_teacher_target(const std::string& name);
std::string to_string(TeacherTarget target);

struct DistillConfig {
  double lambda_fm = 2.0;
  double lambda_dist = 45.0;
  int s_k = 950;
  int batch = 32;
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.9;
  int steps = 1000;
  int crop = 32;  // frames, divisible by 4
  TeacherTarget target = TeacherTarget::x0_prediction;
  double collapse_threshold = 1e-4;
  int collapse_window = 100;
  void validate(const NoiseSchedule& sched) const;
};

struct DistillLogRow {
  long step = 0;
  double adv_g = 0.0;
  double adv_d = 0.0;
  double fm = 0.0;
  double dist = 0.0;
  double total_g = 0.0;
};

// One-step student output mu_theta(x_{S_K}, S_K, s, p) with x_{S_K} = forward_diffuse(x0, S_K, eps).
Var student_generate(const Predictor& student, const Tensor& x0, const Tensor& eps, const Var& s, const Var& p,
                     int s_k, const NoiseSchedule& sched);

// Least-squares GAN terms averaged over resolutions (each score map averaged over its elements).
Var lsgan_discriminator_loss(const DiscriminatorOutput& real, const DiscriminatorOutput& fake);
Var lsgan_generator_loss(const DiscriminatorOutput& fake);
// Mean over resolutions of sum_l ||D_l(real) - D_l(fake)||_1 / N_l, averaged over the batch.
Var feature_matching_loss(const DiscriminatorOutput& real, const DiscriminatorOutput& fake);

// Waveform-domain losses with a frozen vocoder. x_theta is detached inside adv_loss_d.
Var adv_loss_d(const Tensor& real_mel, const Var& x_theta, const Discriminator& D, const Vocoder& V);
Var adv_loss_g(const Var& x_theta, const Discriminator& D, const Vocoder& V);
Var fm_loss(const Tensor& real_mel, const Var& x_theta, const Discriminator& D, const Vocoder& V);

// c(t) = alpha_t, the per-step retention factor.
double distill_weight(int t, const NoiseSchedule& sched);
// Teacher one-step estimate from sg(x_{theta,t}), no graph recorded.
Tensor teacher_estimate(const Predictor& teacher, const Tensor& x_theta_t, std::span<const int> t, const Var& s,
                        const Var& p, const NoiseSchedule& sched, TeacherTarget target);
// mean_b c(t_b) * mean|x_phi,b - x_theta,b| with x_{theta,t} = forward_diffuse(sg(x_theta), t, eps_t).
Var score_distillation_loss(const Var& x_theta, std::span<const int> t, const Tensor& eps_t, const Var& s,
                            const Var& p, const Predictor& teacher, const NoiseSchedule& sched,
                            TeacherTarget target = TeacherTarget::x0_prediction);

// Alternating discriminator / generator updates. Teacher and vocoder must be frozen.
class Distiller {
 public:
  Distiller(NoisePredictor& student, const NoisePredictor& teacher, const Vocoder& vocoder, Discriminator& disc,
            const NoiseSchedule& sched, const DistillConfig& cfg);

  // One D step followed by one generator step on `batch`.
  DistillLogRow step(const Batch& batch, Rng& rng);
  long steps() const noexcept { return step_; }
  bool collapse_warned() const noexcept { return collapse_warned_; }
  std::function<void(const std::string&)> on_warning;

 private:
  NoisePredictor& student_;
  const NoisePredictor& teacher_;
  const Vocoder& vocoder_;
  Discriminator& disc_;
  const NoiseSchedule& sched_;
  DistillConfig cfg_;
  nn::Adam opt_g_, opt_d_;
  long step_ = 0;
  int low_d_run_ = 0;
  bool collapse_warned_ = false;
};

struct DistillResult {
  std::vector<DistillLogRow> log;
  bool collapse_warned = false;
};

DistillResult distill(NoisePredictor& student, const NoisePredictor& teacher, const Vocoder& vocoder,
                      Discriminator& disc, const Dataset& ds, const Conditioning& cond,
                      std::span<const std::size_t> indices, const NoiseSchedule& sched, const DistillConfig& cfg,
                      std::uint64_t seed, const std::function<void(const DistillLogRow&)>& on_step = {});

}  // namespace vcd
