// SPDX-License-Identifier: Apache-2.0
#include "vcd/teacher.hpp"

#include <chrono>
#include <cmath>

#include "vcd/error.hpp"
#include "vcd/optim.hpp"

namespace vcd {

void TeacherTrainConfig::validate() const {
  if (epochs < 1 || batch < 1 || crops_per_utterance < 1) throw ConfigError("teacher epochs, batch and crops must be positive");
  if (crop < 4 || crop % NoisePredictor::kDownsample != 0) throw ConfigError("teacher.crop must be a positive multiple of 4");
  if (!(lr > 0.0)) throw ConfigError("teacher.lr must be positive");
}

Tensor diffuse_batch(const Tensor& x0, std::span<const int> t, const Tensor& eps, const NoiseSchedule& sched) {
  if (x0.shape() != eps.shape()) throw ShapeError("x0 and eps shapes differ");
  const int B = x0.dim(0);
  if (static_cast<int>(t.size()) != B) throw ShapeError("need one step per batch element");
  const std::size_t per = x0.size() / static_cast<std::size_t>(B);
  Tensor xt(x0.shape());
  for (int b = 0; b < B; ++b) {
    sched.check_step(t[b]);
    const double ab = sched.alpha_bar[t[b]];
    const double a = std::sqrt(ab), c = std::sqrt(1.0 - ab);
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) xt[i] = a * x0[i] + c * eps[i];
  }
  return xt;
}

Var ddpm_loss(const Predictor& predictor, const Tensor& x0, std::span<const int> t, const Tensor& eps, const Var& s,
              const Var& p, const NoiseSchedule& sched) {
  for (double v : x0.values())
    if (!std::isfinite(v)) throw NumericError("non-finite value in x0");
  for (double v : eps.values())
    if (!std::isfinite(v)) throw NumericError("non-finite value in eps");
  const Var xt = ad::constant(diffuse_batch(x0, t, eps, sched));
  return ad::l1_loss(predictor(xt, t, s, p), ad::constant(eps));
}

std::vector<TeacherLogRow> train_teacher(NoisePredictor& model, const Dataset& ds, const Conditioning& cond,
                                         std::span<const std::size_t> indices, const NoiseSchedule& sched,
                                         const TeacherTrainConfig& cfg, std::uint64_t seed,
                                         const TeacherTrainHooks& hooks) {
  cfg.validate();
  if (indices.empty()) throw DataError("no utterances for teacher training");
  Rng rng(seed);
  nn::Adam opt(model.params().vars(), {cfg.lr, cfg.beta1, cfg.beta2, 1e-8, 0.0});
  const Predictor predictor(model);
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<TeacherLogRow> log;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order;
    for (int c = 0; c < cfg.crops_per_utterance; ++c) order.insert(order.end(), indices.begin(), indices.end());
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
    }
    double total = 0.0;
    int steps = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch)) {
      const std::span<const std::size_t> items(order.data() + b, std::min<std::size_t>(cfg.batch, order.size() - b));
      const Batch batch = make_batch(ds, cond, items, cfg.crop, rng);
      std::vector<int> t(items.size());
      for (int& ti : t) {
        ti = rng.uniform_int(1, sched.T);
        if (hooks.on_step_draw) hooks.on_step_draw(ti);
      }
      Tensor eps(batch.x0.shape());
      rng.fill_normal(eps.values());
      opt.zero_grad();
      const Var loss = ddpm_loss(predictor, batch.x0, t, eps, ad::constant(batch.s), ad::constant(batch.p), sched);
      if (!std::isfinite(loss.item())) {
        throw NumericError("teacher training diverged: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(steps + 1));
      }
      loss.backward();
      opt.step();
      total += loss.item();
      ++steps;
    }
    TeacherLogRow row{epoch, total / steps,
                      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
    log.push_back(row);
    if (hooks.on_epoch) hooks.on_epoch(row);
  }
  return log;
}

}  // namespace vcd
