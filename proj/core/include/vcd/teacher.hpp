// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "vcd/encoders.hpp"
#include "vcd/networks.hpp"
#include "vcd/schedule.hpp"

namespace vcd {

struct TeacherTrainConfig {
  int epochs = 30;
  int batch = 32;
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int crop = 64;  // frames, divisible by 4
  int crops_per_utterance = 1;
  void validate() const;
};

struct TeacherLogRow {
  int epoch = 0;
  double mean_loss = 0.0;
  double wall_time = 0.0;  // seconds since training start
};

// Mean |eps - eps_hat(x_t, t, s, p)| with x_t = forward_diffuse(x0, t_b, eps) per example.
Var ddpm_loss(const Predictor& predictor, const Tensor& x0, std::span<const int> t, const Tensor& eps, const Var& s,
              const Var& p, const NoiseSchedule& sched);
// x_t for a batch with one step per example.
Tensor diffuse_batch(const Tensor& x0, std::span<const int> t, const Tensor& eps, const NoiseSchedule& sched);

struct TeacherTrainHooks {
  std::function<void(const TeacherLogRow&)> on_epoch;
  // Receives every sampled step.
  std::function<void(int)> on_step_draw;
};

std::vector<TeacherLogRow> train_teacher(NoisePredictor& model, const Dataset& ds, const Conditioning& cond,
                                         std::span<const std::size_t> indices, const NoiseSchedule& sched,
                                         const TeacherTrainConfig& cfg, std::uint64_t seed,
                                         const TeacherTrainHooks& hooks = {});

}  // namespace vcd
