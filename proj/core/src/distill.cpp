// SPDX-License-Identifier: Apache-2.0
#include "vcd/distill.hpp"

#include <cmath>

#include "vcd/error.hpp"
#include "vcd/teacher.hpp"

namespace vcd {

TeacherTarget parse_teacher_target(const std::string& name) {
  if (name == "x0_prediction") return TeacherTarget::x0_prediction;
  if (name == "posterior_mean") return TeacherTarget::posterior_mean;
  throw ConfigError("unknown distill.target '" + name + "' (expected x0_prediction or posterior_mean)");
}

std::string to_string(TeacherTarget target) {
  return target == TeacherTarget::x0_prediction ? "x0_prediction" : "posterior_mean";
}

void DistillConfig::validate(const NoiseSchedule& sched) const {
  if (s_k < 1 || s_k > sched.T) throw ConfigError("distill.s_k outside [1, T]");
  if (steps < 1 || batch < 1) throw ConfigError("distill steps and batch must be positive");
  if (crop < 4 || crop % NoisePredictor::kDownsample != 0) throw ConfigError("distill.crop must be a positive multiple of 4");
  if (lambda_fm < 0.0 || lambda_dist < 0.0) throw ConfigError("distill loss weights must be non-negative");
}

Var student_generate(const Predictor& student, const Tensor& x0, const Tensor& eps, const Var& s, const Var& p,
                     int s_k, const NoiseSchedule& sched) {
  sched.check_step(s_k);
  const Tensor x_sk = forward_diffuse(x0, s_k, eps, sched);
  const SubSchedule one = subsequence_from_steps({s_k}, sched);
  const auto c = denoise_coefficients(one, 1);
  const std::vector<int> t(static_cast<std::size_t>(x0.dim(0)), s_k);
  const Var x = ad::constant(x_sk);
  return ad::affine(x, c.a, student(x, t, s, p), -c.b);
}

Var lsgan_discriminator_loss(const DiscriminatorOutput& real, const DiscriminatorOutput& fake) {
  if (real.scores.size() != fake.scores.size() || real.scores.empty()) throw ShapeError("resolution count mismatch");
  Var total;
  for (std::size_t r = 0; r < real.scores.size(); ++r) {
    const Var term = ad::add(ad::mean(ad::square(ad::add_scalar(real.scores[r], -1.0))), ad::mean(ad::square(fake.scores[r])));
    total = total.defined() ? ad::add(total, term) : term;
  }
  return ad::scale(total, 1.0 / static_cast<double>(real.scores.size()));
}

Var lsgan_generator_loss(const DiscriminatorOutput& fake) {
  if (fake.scores.empty()) throw ShapeError("discriminator produced no scores");
  Var total;
  for (const auto& s : fake.scores) {
    const Var term = ad::mean(ad::square(ad::add_scalar(s, -1.0)));
    total = total.defined() ? ad::add(total, term) : term;
  }
  return ad::scale(total, 1.0 / static_cast<double>(fake.scores.size()));
}

Var feature_matching_loss(const DiscriminatorOutput& real, const DiscriminatorOutput& fake) {
  if (real.features.size() != fake.features.size() || real.features.empty()) {
    throw ShapeError("feature-matching layer count mismatch: " + std::to_string(real.features.size()) + " vs " +
                     std::to_string(fake.features.size()));
  }
  int resolutions = 0;
  for (int r : fake.feature_resolution) resolutions = std::max(resolutions, r + 1);
  Var total;
  for (std::size_t l = 0; l < fake.features.size(); ++l) {
    // Mean over [B, N_l] equals the batch average of ||.||_1 / N_l.
    const Var term = ad::l1_loss(fake.features[l], real.features[l].detach());
    total = total.defined() ? ad::add(total, term) : term;
  }
  return ad::scale(total, 1.0 / resolutions);
}

namespace {
Var vocode_frozen(const Vocoder& V, const Var& mel) {
  if (V.params().trainable()) throw ContractViolation("the vocoder must be frozen during distillation");
  return V.forward(mel);
}

// Discriminator pass that records no parameter gradients.
class FrozenDiscriminator {
 public:
  explicit FrozenDiscriminator(const Discriminator& D) : D_(const_cast<Discriminator&>(D)), was_(D.params().trainable()) {
    D_.params().set_trainable(false);
  }
  ~FrozenDiscriminator() { D_.params().set_trainable(was_); }
  FrozenDiscriminator(const FrozenDiscriminator&) = delete;
  FrozenDiscriminator& operator=(const FrozenDiscriminator&) = delete;

 private:
  Discriminator& D_;
  bool was_;
};
}  // namespace

Var adv_loss_d(const Tensor& real_mel, const Var& x_theta, const Discriminator& D, const Vocoder& V) {
  Var real_wav, fake_wav;
  {
    ad::NoGradGuard guard;
    real_wav = vocode_frozen(V, ad::constant(real_mel));
    fake_wav = vocode_frozen(V, x_theta.detach());
  }
  return lsgan_discriminator_loss(D.forward(real_wav), D.forward(fake_wav));
}

Var adv_loss_g(const Var& x_theta, const Discriminator& D, const Vocoder& V) {
  FrozenDiscriminator frozen(D);
  return lsgan_generator_loss(D.forward(vocode_frozen(V, x_theta)));
}

Var fm_loss(const Tensor& real_mel, const Var& x_theta, const Discriminator& D, const Vocoder& V) {
  FrozenDiscriminator frozen(D);
  DiscriminatorOutput real;
  {
    ad::NoGradGuard guard;
    real = D.forward(vocode_frozen(V, ad::constant(real_mel)));
  }
  return feature_matching_loss(real, D.forward(vocode_frozen(V, x_theta)));
}

double distill_weight(int t, const NoiseSchedule& sched) {
  sched.check_step(t);
  return sched.alpha[t];
}

Tensor teacher_estimate(const Predictor& teacher, const Tensor& x_theta_t, std::span<const int> t, const Var& s,
                        const Var& p, const NoiseSchedule& sched, TeacherTarget target) {
  ad::NoGradGuard guard;
  const Tensor eps_hat = teacher(ad::constant(x_theta_t), t, s.detach(), p.detach()).value();
  const int B = x_theta_t.dim(0);
  const std::size_t per = x_theta_t.size() / static_cast<std::size_t>(B);
  Tensor out(x_theta_t.shape());
  for (int b = 0; b < B; ++b) {
    const auto c = target == TeacherTarget::x0_prediction ? x0_prediction_coefficients(t[b], sched)
                                                          : posterior_mean_coefficients(t[b], sched);
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) out[i] = c.a * x_theta_t[i] - c.b * eps_hat[i];
  }
  return out;
}

Var score_distillation_loss(const Var& x_theta, std::span<const int> t, const Tensor& eps_t, const Var& s,
                            const Var& p, const Predictor& teacher, const NoiseSchedule& sched, TeacherTarget target) {
  const Tensor x_theta_t = diffuse_batch(x_theta.value(), t, eps_t, sched);
  const Tensor x_phi = teacher_estimate(teacher, x_theta_t, t, s, p, sched, target);
  std::vector<double> weights;
  for (int ti : t) weights.push_back(distill_weight(ti, sched));
  return ad::mean(ad::scale_batch(ad::abs(ad::sub(ad::constant(x_phi), x_theta)), weights));
}

Distiller::Distiller(NoisePredictor& student, const NoisePredictor& teacher, const Vocoder& vocoder,
                     Discriminator& disc, const NoiseSchedule& sched, const DistillConfig& cfg)
    : student_(student),
      teacher_(teacher),
      vocoder_(vocoder),
      disc_(disc),
      sched_(sched),
      cfg_(cfg),
      opt_g_(student.params().vars(), {cfg.lr, cfg.beta1, cfg.beta2, 1e-8, 0.0}),
      opt_d_(disc.params().vars(), {cfg.lr, cfg.beta1, cfg.beta2, 1e-8, 0.0}) {
  cfg_.validate(sched);
  if (teacher.params().trainable()) throw ContractViolation("the teacher must be frozen during distillation");
  if (vocoder.params().trainable()) throw ContractViolation("the vocoder must be frozen during distillation");
  if (&student.params() == &teacher.params()) throw ContractViolation("student and teacher must be distinct");
}

DistillLogRow Distiller::step(const Batch& batch, Rng& rng) {
  const Predictor student(student_);
  const Predictor teacher(teacher_);
  const Var s = ad::constant(batch.s);
  const Var p = ad::constant(batch.p);
  const int B = batch.x0.dim(0);

  Tensor eps_sk(batch.x0.shape());
  rng.fill_normal(eps_sk.values());
  student_.params().set_trainable(true);
  const Var x_theta = student_generate(student, batch.x0, eps_sk, s, p, cfg_.s_k, sched_);

  Var real_wav;
  {
    ad::NoGradGuard guard;
    real_wav = vocoder_.forward(ad::constant(batch.x0));
  }

  // Discriminator update on detached fakes.
  Var fake_wav_d;
  {
    ad::NoGradGuard guard;
    fake_wav_d = vocoder_.forward(x_theta.detach());
  }
  disc_.params().set_trainable(true);
  opt_d_.zero_grad();
  const Var loss_d = lsgan_discriminator_loss(disc_.forward(real_wav), disc_.forward(fake_wav_d));
  if (!std::isfinite(loss_d.item())) throw NumericError("non-finite discriminator loss at step " + std::to_string(step_ + 1));
  loss_d.backward();
  opt_d_.step();

  // Generator update with the discriminator frozen.
  disc_.params().set_trainable(false);
  DiscriminatorOutput real;
  {
    ad::NoGradGuard guard;
    real = disc_.forward(real_wav);
  }
  const DiscriminatorOutput fake = disc_.forward(vocoder_.forward(x_theta));
  const Var adv = lsgan_generator_loss(fake);
  const Var fm = feature_matching_loss(real, fake);

  std::vector<int> t(static_cast<std::size_t>(B));
  for (int& ti : t) ti = rng.uniform_int(1, sched_.T);
  Tensor eps_t(batch.x0.shape());
  rng.fill_normal(eps_t.values());
  const Var dist = score_distillation_loss(x_theta, t, eps_t, s, p, teacher, sched_, cfg_.target);

  const Var total = ad::add(ad::add(adv, ad::scale(fm, cfg_.lambda_fm)), ad::scale(dist, cfg_.lambda_dist));
  if (!std::isfinite(total.item())) throw NumericError("non-finite generator loss at step " + std::to_string(step_ + 1));
  opt_g_.zero_grad();
  total.backward();
  opt_g_.step();
  disc_.params().set_trainable(true);

  ++step_;
  if (loss_d.item() < cfg_.collapse_threshold) {
    if (++low_d_run_ >= cfg_.collapse_window && !collapse_warned_) {
      collapse_warned_ = true;
      if (on_warning) {
        on_warning("discriminator loss below " + format_double(cfg_.collapse_threshold) + " for " +
                   std::to_string(cfg_.collapse_window) + " consecutive steps (possible collapse)");
      }
    }
  } else {
    low_d_run_ = 0;
  }
  return {step_, adv.item(), loss_d.item(), fm.item(), dist.item(), total.item()};
}

DistillResult distill(NoisePredictor& student, const NoisePredictor& teacher, const Vocoder& vocoder,
                      Discriminator& disc, const Dataset& ds, const Conditioning& cond,
                      std::span<const std::size_t> indices, const NoiseSchedule& sched, const DistillConfig& cfg,
                      std::uint64_t seed, const std::function<void(const DistillLogRow&)>& on_step) {
  if (indices.empty()) throw DataError("no utterances for distillation");
  const std::uint64_t teacher_hash = teacher.params().hash();
  const std::uint64_t vocoder_hash = vocoder.params().hash();
  Distiller d(student, teacher, vocoder, disc, sched, cfg);
  Rng rng(seed);
  DistillResult res;
  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<std::size_t> items;
    while (static_cast<int>(items.size()) < cfg.batch) {
      if (cursor == order.size()) {
        order.assign(indices.begin(), indices.end());
        for (std::size_t i = order.size(); i > 1; --i) {
          std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
        }
        cursor = 0;
      }
      items.push_back(order[cursor++]);
    }
    const Batch batch = make_batch(ds, cond, items, cfg.crop, rng);
    const DistillLogRow row = d.step(batch, rng);
    res.log.push_back(row);
    if (on_step) on_step(row);
  }
  res.collapse_warned = d.collapse_warned();
  if (teacher.params().hash() != teacher_hash) throw ContractViolation("teacher parameters changed during distillation");
  if (vocoder.params().hash() != vocoder_hash) throw ContractViolation("vocoder parameters changed during distillation");
  return res;
}

}  // namespace vcd
