// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"
#include "vcd/error.hpp"
#include "vcd/schedule.hpp"

namespace vcd {
namespace {

class CosineSchedule : public ::testing::Test {
 protected:
  NoiseSchedule sched = build_cosine_schedule(1000);
};

// Reference values from an independent float64 evaluation of the clipped cosine
// schedule (cumulative product of 1 - min(1 - f(t)/f(t-1), 0.999)).
TEST_F(CosineSchedule, MatchesReferenceTable) {
  EXPECT_EQ(sched.T, 1000);
  EXPECT_EQ(sched.alpha_bar[0], 1.0);
  const std::pair<int, double> bars[] = {{1, 0.999958715775178},       {50, 0.9920072786842186},
                                         {100, 0.972092737113969},     {500, 0.49384359044063775},
                                         {900, 0.024091724140085854},  {950, 0.0060596446214511695},
                                         {999, 2.428766907034852e-06}, {1000, 2.4287669070348542e-09}};
  for (const auto& [t, v] : bars) EXPECT_NEAR(sched.alpha_bar[t] / v, 1.0, 1e-12) << "t = " << t;
  EXPECT_NEAR(sched.alpha[950], 0.961247398084274, 1e-13);
  EXPECT_DOUBLE_EQ(sched.beta[1000], 0.999);
}

TEST_F(CosineSchedule, AlphaIsDecreasingSoDistillWeightFalls) {
  for (int t = 2; t <= sched.T; ++t) EXPECT_LT(sched.alpha[t], sched.alpha[t - 1]) << "t = " << t;
  EXPECT_LT(sched.alpha[900], sched.alpha[100]);
}

TEST_F(CosineSchedule, LinearLadderRoundsHalvesDown) {
  const SubSchedule sub = build_subsequence(30, 50, 950, sched);
  const std::vector<int> expected{50,  81,  112, 143, 174, 205, 236, 267, 298, 329, 360, 391, 422, 453, 484,
                                  516, 547, 578, 609, 640, 671, 702, 733, 764, 795, 826, 857, 888, 919, 950};
  EXPECT_EQ(sub.S, expected);
  EXPECT_EQ(build_subsequence(6, 50, 950, sched).S, (std::vector<int>{50, 230, 410, 590, 770, 950}));
  EXPECT_EQ(build_subsequence(2, 10, 11, sched).S, (std::vector<int>{10, 11}));
}

TEST_F(CosineSchedule, SixStepRemapMatchesReference) {
  const SubSchedule sub = build_subsequence(6, 50, 950, sched);
  const double alpha[] = {0.9920072786842186, 0.8757734971525984, 0.7280558347183271,
                          0.5622922819785836, 0.346044013299806,  0.04923595301504949};
  const double sigma[] = {0.0, 0.08698492553608646, 0.31162405608750526, 0.49963573381349113, 0.6931873953327002,
                          0.9158783489784628};
  for (int k = 0; k < 6; ++k) {
    EXPECT_NEAR(sub.alpha_sub[k], alpha[k], 1e-12) << "k = " << k + 1;
    EXPECT_NEAR(sub.sigma_sub[k], sigma[k], 1e-12) << "k = " << k + 1;
  }
}

TEST_F(CosineSchedule, SingleStepUsesLastEndpoint) {
  const SubSchedule sub = build_subsequence(1, 50, 950, sched);
  ASSERT_EQ(sub.S, std::vector<int>{950});
  EXPECT_EQ(sub.sigma_sub[0], 0.0);
  const auto c = denoise_coefficients(sub, 1);
  EXPECT_NEAR(c.a, 12.846251567442348, 1e-10);
  EXPECT_NEAR(c.b, 12.807270565347443, 1e-10);
  const auto x0 = x0_prediction_coefficients(950, sched);
  EXPECT_NEAR(c.a, x0.a, 1e-12);
  EXPECT_NEAR(c.b, x0.b, 1e-12);
}

TEST_F(CosineSchedule, TelescopingProductOverRandomLadders) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const int a = rng.uniform_int(1, 900);
    const int b = rng.uniform_int(a, 1000);
    const int K = rng.uniform_int(1, std::min(40, b - a + 1));
    const SubSchedule sub = build_subsequence(K, a, b, sched);
    double prod = 1.0;
    for (int k = 0; k < sub.K; ++k) {
      prod *= sub.alpha_sub[k];
      EXPECT_NEAR(prod / sched.alpha_bar[sub.S[k]], 1.0, 1e-10);
    }
  }
}

TEST_F(CosineSchedule, SigmaMatchesPosteriorWhenLadderIsDense) {
  const SubSchedule sub = build_subsequence(1000, 1, 1000, sched);
  for (int t = 2; t <= 1000; t += 37) EXPECT_NEAR(sub.sigma_sub[t - 1], posterior_sigma(t, sched), 1e-12);
}

TEST_F(CosineSchedule, IteratedDiffusionMatchesClosedFormMoments) {
  const int draws = 10000, t = 300;
  const double x0 = 1.5;
  Rng rng(11);
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < draws; ++i) {
    Tensor x({1}, x0);
    for (int s = 1; s <= t; ++s) x = one_step_diffuse(x, s, Tensor({1}, rng.normal()), sched);
    sum += x[0];
    sq += x[0] * x[0];
  }
  const double mean = sum / draws;
  const double var = sq / draws - mean * mean;
  const double ab = sched.alpha_bar[t];
  const double mean_ref = std::sqrt(ab) * x0, var_ref = 1.0 - ab;
  EXPECT_LT(std::abs(mean - mean_ref), 3.0 * std::sqrt(var_ref / draws));
  EXPECT_LT(std::abs(var - var_ref), 3.0 * var_ref * std::sqrt(2.0 / (draws - 1)));
}

TEST_F(CosineSchedule, OneStepDenoisingRecoversCleanInput) {
  const Tensor x0 = test::random_tensor({2, 4, 8}, 21);
  const Tensor eps = test::random_tensor({2, 4, 8}, 22);
  for (int t : {1, 50, 500, 950, 1000}) {
    const SubSchedule sub = subsequence_from_steps({t}, sched);
    const Tensor xt = forward_diffuse(x0, t, eps, sched);
    const Tensor rec = reverse_step(xt, 1, eps, Tensor(x0.shape()), sub);
    EXPECT_LT(test::max_abs_diff(rec.values(), x0.values()), t == 1000 ? 1e-3 : 1e-9) << "t = " << t;
  }
}

TEST_F(CosineSchedule, FinalStepMustBeNoiseless) {
  const SubSchedule sub = build_subsequence(3, 10, 30, sched);
  const Tensor x = test::random_tensor({1, 2, 4}, 23);
  const Tensor z = test::random_tensor({1, 2, 4}, 24);
  EXPECT_THROW(reverse_step(x, 1, x, z, sub), ContractViolation);
  EXPECT_NO_THROW(reverse_step(x, 2, x, z, sub));
}

TEST_F(CosineSchedule, RejectsInvalidRequests) {
  EXPECT_THROW(build_subsequence(0, 10, 20, sched), ParameterError);
  EXPECT_THROW(build_subsequence(12, 10, 20, sched), ParameterError);
  EXPECT_THROW(build_subsequence(2, 0, 20, sched), ParameterError);
  EXPECT_THROW(build_subsequence(2, 30, 20, sched), ParameterError);
  EXPECT_THROW(build_subsequence(2, 10, 1001, sched), ParameterError);
  EXPECT_THROW(subsequence_from_steps({20, 10}, sched), ParameterError);
  EXPECT_THROW(forward_diffuse(Tensor({2}), 0, Tensor({2}), sched), ParameterError);
  EXPECT_THROW(forward_diffuse(Tensor({2}), 5, Tensor({3}), sched), ShapeError);
  EXPECT_THROW(build_cosine_schedule(0), ParameterError);
  EXPECT_THROW(schedule_from_betas({0.0, 0.5, 1.2}, 0.0), NumericError);
}

}  // namespace
}  // namespace vcd
