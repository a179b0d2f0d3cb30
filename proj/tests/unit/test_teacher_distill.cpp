// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>
#include <numeric>
#include <vector>

#include "test_util.hpp"
#include "vcd/distill.hpp"
#include "vcd/pipeline.hpp"
#include "vcd/teacher.hpp"

namespace vcd {
namespace {

using test::max_abs_diff;
using test::random_tensor;

constexpr int kMels = 8;

Predictor returning(const Tensor& value) {
  return Predictor([value](const Var&, std::span<const int>, const Var&, const Var&) { return ad::constant(value); });
}

// Small random dataset with tiny-preset conditioning shapes.
struct TinyData {
  Dataset ds;
  Conditioning cond;
};

TinyData tiny_data(int n_items, int frames, std::uint64_t seed) {
  const auto net = network_preset("tiny");
  TinyData d;
  d.ds.n_speakers = 4;
  d.ds.n_scripts = n_items;
  for (int i = 0; i < n_items; ++i) {
    Example e;
    e.id = "u" + std::to_string(i);
    e.speaker = i % 4;
    e.script = i;
    const Tensor m = random_tensor({1, kMels, frames}, seed + i);
    e.mel = tensor_to_mel(m);
    d.ds.items.push_back(e);
    d.cond.speaker.push_back(random_tensor({net.predictor.speaker_dim}, seed + 100 + i));
    d.cond.content.push_back(random_tensor({net.predictor.content_dim, frames}, seed + 200 + i));
  }
  return d;
}

std::vector<std::size_t> all_items(const Dataset& ds) {
  std::vector<std::size_t> v(ds.items.size());
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

// ---------------------------------------------------------------- teacher

TEST(DdpmLoss, ZeroIffPredictionEqualsNoise) {
  const NoiseSchedule sched = build_cosine_schedule(1000);
  const Tensor x0 = random_tensor({2, kMels, 8}, 1), eps = random_tensor({2, kMels, 8}, 2);
  const Var s = ad::constant(random_tensor({2, 4}, 3)), p = ad::constant(random_tensor({2, 2, 8}, 4));
  const std::vector<int> t{10, 900};
  EXPECT_EQ(ddpm_loss(returning(eps), x0, t, eps, s, p, sched).value().item(), 0.0);
  Tensor shifted = eps;
  for (double& v : shifted.values()) v += 0.1;
  EXPECT_NEAR(ddpm_loss(returning(shifted), x0, t, eps, s, p, sched).value().item(), 0.1, 1e-12);
}

TEST(DdpmLoss, ZeroPredictorGivesMeanAbsNormal) {
  const NoiseSchedule sched = build_cosine_schedule(1000);
  const Tensor eps = random_tensor({4, kMels, 5000}, 5);
  const Tensor zero({4, kMels, 5000});
  const std::vector<int> t{1, 2, 3, 4};
  const Var s = ad::constant(Tensor({4, 4})), p = ad::constant(Tensor({4, 2, 5000}));
  const double loss = ddpm_loss(returning(zero), zero, t, eps, s, p, sched).value().item();
  // E|N(0,1)| = sqrt(2/pi); 1.6e5 draws give a standard error near 1.5e-3.
  EXPECT_NEAR(loss, std::sqrt(2.0 / std::acos(-1.0)), 6e-3);
}

TEST(DdpmLoss, IgnoredSpeakerPermutationIsInvariant) {
  const NoiseSchedule sched = build_cosine_schedule(1000);
  const Tensor x0 = random_tensor({2, kMels, 8}, 1), eps = random_tensor({2, kMels, 8}, 2);
  const Predictor ablation([](const Var& x, std::span<const int>, const Var&, const Var&) { return ad::scale(x, 0.5); });
  const Tensor s = random_tensor({2, 4}, 3);
  Tensor swapped({2, 4});
  for (int i = 0; i < 4; ++i) {
    swapped.values()[i] = s.values()[4 + i];
    swapped.values()[4 + i] = s.values()[i];
  }
  const Var p = ad::constant(random_tensor({2, 2, 8}, 4));
  const std::vector<int> t{100, 200};
  EXPECT_EQ(ddpm_loss(ablation, x0, t, eps, ad::constant(s), p, sched).value().item(),
            ddpm_loss(ablation, x0, t, eps, ad::constant(swapped), p, sched).value().item());
}

TEST(DiffuseBatch, MatchesPerExampleForwardDiffusion) {
  const NoiseSchedule sched = build_cosine_schedule(1000);
  const Tensor x0 = random_tensor({3, kMels, 4}, 6), eps = random_tensor({3, kMels, 4}, 7);
  const std::vector<int> t{1, 500, 1000};
  const Tensor xt = diffuse_batch(x0, t, eps, sched);
  const int per = kMels * 4;
  for (int b = 0; b < 3; ++b) {
    Tensor xb({kMels, 4}), eb({kMels, 4});
    std::copy_n(x0.values().begin() + b * per, per, xb.values().begin());
    std::copy_n(eps.values().begin() + b * per, per, eb.values().begin());
    const Tensor ref = forward_diffuse(xb, t[b], eb, sched);
    for (int i = 0; i < per; ++i) ASSERT_EQ(xt.values()[b * per + i], ref.values()[i]);
  }
  EXPECT_THROW(diffuse_batch(x0, std::vector<int>{1, 2}, eps, sched), ShapeError);
}

TeacherTrainConfig small_teacher() {
  TeacherTrainConfig tc;
  tc.epochs = 2;
  tc.batch = 4;
  tc.lr = 1e-3;
  tc.crop = 8;
  return tc;
}

TEST(TrainTeacher, SameSeedGivesIdenticalTrajectory) {
  const auto d = tiny_data(8, 16, 40);
  const NoiseSchedule sched = build_cosine_schedule(1000);
  const auto run = [&] {
    NoisePredictor m(network_preset("tiny").predictor, 5, &sched);
    auto rows = train_teacher(m, d.ds, d.cond, all_items(d.ds), sched, small_teacher(), 11);
    return std::make_pair(rows, m.params().hash());
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.first.size(), 2u);
  for (std::size_t i = 0; i < a.first.size(); ++i) EXPECT_EQ(a.first[i].mean_loss, b.first[i].mean_loss);
  EXPECT_EQ(a.second, b.second);
}

TEST(TrainTeacher, StepDrawsAreUniform) {
  const auto d = tiny_data(8, 16, 41);
  const NoiseSchedule sched = build_cosine_schedule(1000);
  NoisePredictor m(network_preset("tiny").predictor, 5, &sched);
  TeacherTrainConfig tc = small_teacher();
  tc.epochs = 1;
  tc.batch = 50;
  tc.crops_per_utterance = 250;
  std::vector<int> bins(10, 0);
  int draws = 0;
  TeacherTrainHooks hooks;
  hooks.on_step_draw = [&](int t) {
    ASSERT_GE(t, 1);
    ASSERT_LE(t, 1000);
    ++bins[static_cast<std::size_t>((t - 1) / 100)];
    ++draws;
  };
  train_teacher(m, d.ds, d.cond, all_items(d.ds), sched, tc, 12, hooks);
  ASSERT_EQ(draws, 2000);
  double chi2 = 0.0;
  for (int c : bins) chi2 += (c - 200.0) * (c - 200.0) / 200.0;
  EXPECT_LT(chi2, 21.666);  // chi-square, 9 dof, 1% level
}

TEST(TrainTeacher, CheckpointRoundTripReproducesLossBitwise) {
  const auto d = tiny_data(4, 16, 42);
  const NoiseSchedule sched = build_cosine_schedule(1000);
  NoisePredictor m(network_preset("tiny").predictor, 5, &sched);
  train_teacher(m, d.ds, d.cond, all_items(d.ds), sched, small_teacher(), 13);
  const auto dir = std::filesystem::temp_directory_path() / "vcd_test_teacher_ckpt";
  std::filesystem::create_directories(dir);
  save_predictor(dir / "teacher.ckpt", m, sched, NormStats{std::vector<double>(kMels, 0.0), std::vector<double>(kMels, 1.0)},
                 "teacher");
  const NoisePredictor r = load_predictor(dir / "teacher.ckpt");
  std::filesystem::remove_all(dir);
  const Tensor x0 = random_tensor({2, kMels, 8}, 1), eps = random_tensor({2, kMels, 8}, 2);
  const Var s = ad::constant(random_tensor({2, 4}, 3)), p = ad::constant(random_tensor({2, 2, 8}, 4));
  const std::vector<int> t{17, 733};
  EXPECT_EQ(ddpm_loss(Predictor(m), x0, t, eps, s, p, sched).value().item(),
            ddpm_loss(Predictor(r), x0, t, eps, s, p, sched).value().item());
  EXPECT_EQ(m.params().hash(), r.params().hash());
}

// ---------------------------------------------------------------- distillation

TEST(StudentGenerate, OraclePredictorRecoversCleanInputInOneCall) {
  const NoiseSchedule sched = build_cosine_schedule(1000);
  const Tensor x0 = random_tensor({2, kMels, 8}, 1), eps = random_tensor({2, kMels, 8}, 2);
  const Predictor oracle = returning(eps);
  const Var s = ad::constant(Tensor({2, 4})), p = ad::constant(Tensor({2, 2, 8}));
  const Tensor x = student_generate(oracle, x0, eps, s, p, 950, sched).value();
  EXPECT_EQ(oracle.calls(), 1);
  EXPECT_EQ(x.shape(), x0.shape());
  EXPECT_LT(max_abs_diff(x.values(), x0.values()), 1e-12);
  EXPECT_THROW(student_generate(oracle, x0, eps, s, p, 1001, sched), ParameterError);
}

DiscriminatorOutput constant_output(double score, const std::vector<double>& feature_values) {
  DiscriminatorOutput o;
  for (int r = 0; r < 2; ++r) {
    Tensor sc({2, 1, 3 + r});
    for (double& v : sc.values()) v = score;
    o.scores.push_back(ad::constant(sc));
  }
  for (std::size_t l = 0; l < feature_values.size(); ++l) {
    Tensor f({2, 2, 4});
    for (double& v : f.values()) v = feature_values[l];
    o.features.push_back(ad::constant(f));
    o.feature_resolution.push_back(static_cast<int>(l % 2));
  }
  return o;
}

TEST(Lsgan, ReferenceValues) {
  const auto real1 = constant_output(1.0, {}), fake0 = constant_output(0.0, {}), half = constant_output(0.5, {});
  EXPECT_EQ(lsgan_discriminator_loss(real1, fake0).value().item(), 0.0);
  EXPECT_EQ(lsgan_generator_loss(constant_output(1.0, {})).value().item(), 0.0);
  EXPECT_DOUBLE_EQ(lsgan_discriminator_loss(half, half).value().item(), 0.5);
  EXPECT_DOUBLE_EQ(lsgan_generator_loss(half).value().item(), 0.25);
}

TEST(FeatureMatching, ZeroForEqualFeaturesAndPositivelyHomogeneous) {
  const auto real = constant_output(0.0, {1.0, 2.0, 3.0, 4.0});
  EXPECT_EQ(feature_matching_loss(real, real).value().item(), 0.0);
  const double one = feature_matching_loss(real, constant_output(0.0, {1.5, 1.0, 3.25, 4.0})).value().item();
  const double two = feature_matching_loss(real, constant_output(0.0, {2.0, 0.0, 3.5, 4.0})).value().item();
  EXPECT_GT(one, 0.0);
  EXPECT_DOUBLE_EQ(two, 2.0 * one);
}

TEST(DistillWeight, EqualsRetentionFactorAndDecreases) {
  const NoiseSchedule sched = build_cosine_schedule(1000);
  EXPECT_EQ(distill_weight(950, sched), sched.alpha[950]);
  EXPECT_LT(distill_weight(900, sched), distill_weight(100, sched));
  for (int t = 2; t <= 1000; ++t) ASSERT_LE(distill_weight(t, sched), distill_weight(t - 1, sched));
}

TEST(ScoreDistillation, ZeroWhenTeacherReproducesStudent) {
  const NoiseSchedule sched = build_cosine_schedule(1000);
  const Tensor x = random_tensor({2, kMels, 8}, 3), eps_t = random_tensor({2, kMels, 8}, 4);
  const Predictor teacher = returning(eps_t);  // x0-prediction then returns sg(x_theta)
  const Var s = ad::constant(Tensor({2, 4})), p = ad::constant(Tensor({2, 2, 8}));
  const double loss = score_distillation_loss(ad::constant(x), std::vector<int>{40, 600}, eps_t, s, p, teacher, sched).value().item();
  EXPECT_LT(loss, 1e-13);
  EXPECT_EQ(teacher.calls(), 1);
}

struct DistillRig {
  NoiseSchedule sched = build_cosine_schedule(1000);
  NetworkPreset net = network_preset("tiny");
  NoisePredictor teacher{net.predictor, 1, &sched};
  NoisePredictor student{net.predictor, 1, &sched};
  Vocoder vocoder{net.vocoder, 2};
  Discriminator disc{net.discriminator, 3};
  DistillRig() {
    teacher.params().set_trainable(false);
    vocoder.params().set_trainable(false);
  }
  Batch batch(std::uint64_t seed) const {
    Batch b;
    b.x0 = random_tensor({2, kMels, 8}, seed);
    b.s = random_tensor({2, net.predictor.speaker_dim}, seed + 1);
    b.p = random_tensor({2, net.predictor.content_dim, 8}, seed + 2);
    return b;
  }
  static DistillConfig config() {
    DistillConfig c;
    c.batch = 2;
    c.crop = 8;
    c.steps = 3;
    return c;
  }
};

TEST(Distiller, RequiresFrozenTeacherAndVocoder) {
  DistillRig rig;
  NoisePredictor open(rig.net.predictor, 1, &rig.sched);
  EXPECT_THROW(Distiller(rig.student, open, rig.vocoder, rig.disc, rig.sched, DistillRig::config()), ContractViolation);
  Vocoder open_voc(rig.net.vocoder, 2);
  EXPECT_THROW(Distiller(rig.student, rig.teacher, open_voc, rig.disc, rig.sched, DistillRig::config()), ContractViolation);
  DistillConfig bad = DistillRig::config();
  bad.s_k = 0;
  EXPECT_THROW(Distiller(rig.student, rig.teacher, rig.vocoder, rig.disc, rig.sched, bad), ConfigError);
}

TEST(Distiller, TotalIsWeightedSumAndOnlyTrainablesMove) {
  DistillRig rig;
  const auto h_teacher = rig.teacher.params().hash(), h_voc = rig.vocoder.params().hash();
  const auto h_student = rig.student.params().hash(), h_disc = rig.disc.params().hash();
  Distiller d(rig.student, rig.teacher, rig.vocoder, rig.disc, rig.sched, DistillRig::config());
  Rng rng(5);
  for (int i = 0; i < 3; ++i) {
    const DistillLogRow r = d.step(rig.batch(10 + i), rng);
    EXPECT_GE(r.adv_g, 0.0);
    EXPECT_GE(r.adv_d, 0.0);
    EXPECT_GE(r.fm, 0.0);
    EXPECT_GE(r.dist, 0.0);
    EXPECT_NEAR(r.total_g, r.adv_g + 2.0 * r.fm + 45.0 * r.dist, 1e-12 * std::max(1.0, r.total_g));
  }
  EXPECT_EQ(d.steps(), 3);
  EXPECT_EQ(rig.teacher.params().hash(), h_teacher);
  EXPECT_EQ(rig.vocoder.params().hash(), h_voc);
  EXPECT_NE(rig.student.params().hash(), h_student);
  EXPECT_NE(rig.disc.params().hash(), h_disc);
}

TEST(Distiller, DiscriminatorStepLeavesStudentUntouched) {
  // With the generator learning rate at zero only the discriminator update can act.
  DistillRig rig;
  DistillConfig c = DistillRig::config();
  const auto h_student = rig.student.params().hash();
  c.lr = 0.0;
  Distiller d(rig.student, rig.teacher, rig.vocoder, rig.disc, rig.sched, c);
  Rng rng(5);
  d.step(rig.batch(20), rng);
  EXPECT_EQ(rig.student.params().hash(), h_student);
}

TEST(Distiller, SameSeedSameTrajectory) {
  const auto run = [] {
    DistillRig rig;
    Distiller d(rig.student, rig.teacher, rig.vocoder, rig.disc, rig.sched, DistillRig::config());
    Rng rng(8);
    std::vector<double> totals;
    for (int i = 0; i < 2; ++i) totals.push_back(d.step(rig.batch(30 + i), rng).total_g);
    return totals;
  };
  EXPECT_EQ(run(), run());
}

TEST(Distiller, WarnsOnDiscriminatorCollapse) {
  DistillRig rig;
  DistillConfig c = DistillRig::config();
  c.collapse_threshold = 1e9;
  c.collapse_window = 2;
  Distiller d(rig.student, rig.teacher, rig.vocoder, rig.disc, rig.sched, c);
  int warnings = 0;
  d.on_warning = [&](const std::string&) { ++warnings; };
  Rng rng(5);
  d.step(rig.batch(40), rng);
  EXPECT_FALSE(d.collapse_warned());
  d.step(rig.batch(41), rng);
  EXPECT_TRUE(d.collapse_warned());
  d.step(rig.batch(42), rng);
  EXPECT_EQ(warnings, 1);
}

}  // namespace
}  // namespace vcd
