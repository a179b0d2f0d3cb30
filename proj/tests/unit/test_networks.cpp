// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <vector>

#include "test_util.hpp"
#include "vcd/networks.hpp"
#include "vcd/schedule.hpp"

namespace vcd {
namespace {

using test::max_abs_diff;
using test::random_tensor;

NetworkPreset tiny() { return network_preset("tiny"); }

struct PredictorInputs {
  Var x, s, p;
  std::vector<int> t;
};

PredictorInputs inputs(const NoisePredictorConfig& c, int B, int F, std::uint64_t seed) {
  return {ad::constant(random_tensor({B, c.n_mels, F}, seed)), ad::constant(random_tensor({B, c.speaker_dim}, seed + 1)),
          ad::constant(random_tensor({B, c.content_dim, F}, seed + 2)), std::vector<int>(static_cast<std::size_t>(B), 500)};
}

TEST(TimeEmbedding, ZeroStepIsSinZeroCosOne) {
  const auto e = encode_time(0.0, 16);
  for (int i = 0; i < 8; ++i) {
    EXPECT_EQ(e[i], 0.0);
    EXPECT_EQ(e[8 + i], 1.0);
  }
}

TEST(TimeEmbedding, MatchesFrequencyLadder) {
  const auto e = encode_time(50.0, 4);
  // w = {1, 1e-4}
  EXPECT_DOUBLE_EQ(e[0], std::sin(50.0));
  EXPECT_NEAR(e[1], std::sin(0.005), 1e-15);
  EXPECT_DOUBLE_EQ(e[2], std::cos(50.0));
  EXPECT_NEAR(e[3], std::cos(0.005), 1e-15);
}

TEST(TimeEmbedding, DistinctStepsGiveDistinctEmbeddings) {
  for (int t = 1; t < 1000; ++t) {
    const auto a = encode_time(t, 64), b = encode_time(t + 1, 64);
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
    ASSERT_GT(d, 0.0) << t;
  }
  EXPECT_THROW(encode_time(1.0, 5), ParameterError);
}

class PredictorShape : public ::testing::TestWithParam<int> {};

TEST_P(PredictorShape, OutputMatchesPaddedInput) {
  const NoiseSchedule sched = build_cosine_schedule(1000);
  const NoisePredictor net(tiny().predictor, 3, &sched);
  const int F = GetParam();
  const auto in = inputs(net.config(), 2, F, 10);
  const Tensor y = net(in.x, in.t, in.s, in.p).value();
  EXPECT_EQ(y.shape(), in.x.shape());
  const Tensor y2 = net(in.x, in.t, in.s, in.p).value();
  EXPECT_EQ(max_abs_diff(y.values(), y2.values()), 0.0);
}

INSTANTIATE_TEST_SUITE_P(Frames, PredictorShape, ::testing::Values(36, 64, 128));

TEST(NoisePredictor, RejectsBadShapes) {
  const NoiseSchedule sched = build_cosine_schedule(1000);
  const NoisePredictor net(tiny().predictor, 3, &sched);
  const auto c = net.config();
  auto in = inputs(c, 2, 37, 10);
  EXPECT_THROW(net(in.x, in.t, in.s, in.p), ShapeError);
  in = inputs(c, 2, 16, 10);
  EXPECT_THROW(net(in.x, in.t, in.s, ad::constant(random_tensor({2, c.content_dim, 12}, 1))), ShapeError);
  EXPECT_THROW(net(in.x, std::vector<int>{1}, in.s, in.p), ShapeError);
  EXPECT_THROW(net(in.x, std::vector<int>{0, 5}, in.s, in.p), ParameterError);
}

TEST(NoisePredictor, EveryConditioningInputMatters) {
  const NoiseSchedule sched = build_cosine_schedule(1000);
  const NoisePredictor net(tiny().predictor, 3, &sched);
  const auto c = net.config();
  const auto in = inputs(c, 1, 16, 20);
  const Tensor base = net(in.x, in.t, in.s, in.p).value();
  const Tensor other_s = net(in.x, in.t, ad::constant(random_tensor({1, c.speaker_dim}, 77)), in.p).value();
  const Tensor other_p = net(in.x, in.t, in.s, ad::constant(random_tensor({1, c.content_dim, 16}, 78))).value();
  const Tensor other_t = net(in.x, std::vector<int>{501}, in.s, in.p).value();
  EXPECT_GT(max_abs_diff(base.values(), other_s.values()), 0.0);
  EXPECT_GT(max_abs_diff(base.values(), other_p.values()), 0.0);
  EXPECT_GT(max_abs_diff(base.values(), other_t.values()), 0.0);
}

TEST(NoisePredictor, InputSkipAddsScaledInput) {
  const NoiseSchedule sched = build_cosine_schedule(1000);
  NoisePredictorConfig with = tiny().predictor, without = with;
  without.input_skip = false;
  const NoisePredictor a(with, 9, &sched), b(without, 9);
  EXPECT_EQ(a.params().hash(), b.params().hash());
  auto in = inputs(with, 2, 8, 30);
  in.t = {3, 990};
  const Tensor ya = a(in.x, in.t, in.s, in.p).value();
  const Tensor yb = b(in.x, in.t, in.s, in.p).value();
  const int per = with.n_mels * 8;
  for (int bi = 0; bi < 2; ++bi) {
    const double c = std::sqrt(1.0 - sched.alpha_bar[static_cast<std::size_t>(in.t[bi])]);
    for (int i = 0; i < per; ++i) {
      const std::size_t k = static_cast<std::size_t>(bi * per + i);
      ASSERT_NEAR(ya.values()[k] - yb.values()[k], c * in.x.value().values()[k], 1e-12);
    }
  }
  EXPECT_THROW(NoisePredictor(with, 9), ConfigError);
}

TEST(NoisePredictor, SeedDeterminesParameters) {
  const NoiseSchedule sched = build_cosine_schedule(1000);
  const NoisePredictor a(tiny().predictor, 1, &sched), b(tiny().predictor, 1, &sched), c(tiny().predictor, 2, &sched);
  EXPECT_EQ(a.params().hash(), b.params().hash());
  EXPECT_NE(a.params().hash(), c.params().hash());
}

TEST(NoisePredictorConfig, LayerCountMustBeSixPlusMultipleOfSix) {
  NoisePredictorConfig c;
  c.n_layers = 12;
  EXPECT_NO_THROW(c.validate());
  c.n_layers = 9;
  EXPECT_THROW(c.validate(), ConfigError);
  c.n_layers = 6;
  c.kernel = 4;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(NoisePredictorConfig, KeyValueRoundTrip) {
  NoisePredictorConfig c = tiny().predictor;
  c.input_skip = false;
  KeyValues kv;
  c.to_kv(kv, "m.");
  const auto r = NoisePredictorConfig::from_kv(kv, "m.");
  EXPECT_EQ(r.hidden, c.hidden);
  EXPECT_EQ(r.n_layers, c.n_layers);
  EXPECT_EQ(r.content_dim, c.content_dim);
  EXPECT_FALSE(r.input_skip);
}

TEST(Presets, PaperPresetUsesTwelveLayersOf512) {
  const auto p = network_preset("paper");
  EXPECT_EQ(p.predictor.n_layers, 12);
  EXPECT_EQ(p.predictor.hidden, 512);
  EXPECT_EQ(network_preset("toy").predictor.n_layers, 6);
  EXPECT_EQ(network_preset("toy").vocoder.hop(), 256);
  EXPECT_THROW(network_preset("huge"), ConfigError);
}

TEST(Vocoder, UpsamplesByHop) {
  const auto p = tiny();
  const Vocoder v(p.vocoder, 4);
  const Tensor y = v.forward(ad::constant(random_tensor({2, p.vocoder.n_mels, 5}, 3))).value();
  ASSERT_EQ(y.rank(), 2);
  EXPECT_EQ(y.shape()[0], 2);
  EXPECT_EQ(y.shape()[1], 5 * p.vocoder.hop());
}

TEST(Discriminator, ExposesEveryLayer) {
  const auto p = tiny();
  const Discriminator d(p.discriminator, 4);
  const auto out = d.forward(ad::constant(random_tensor({2, 1024}, 5)));
  EXPECT_EQ(out.scores.size(), p.discriminator.fft_sizes.size());
  EXPECT_EQ(static_cast<int>(out.features.size()), d.layers());
  ASSERT_EQ(out.feature_resolution.size(), out.features.size());
  for (std::size_t l = 0; l < out.features.size(); ++l) EXPECT_GT(out.feature_count(l), 0u);
}

TEST(SpeakerEncoder, EmbeddingsAreUnitNorm) {
  const auto p = tiny();
  const SpeakerEncoder enc(p.speaker, 6);
  const Tensor e = enc.embed(ad::constant(random_tensor({3, p.speaker.n_mels, 20}, 7))).value();
  ASSERT_EQ(e.shape(), (Shape{3, p.speaker.embedding_dim}));
  for (int b = 0; b < 3; ++b) {
    double n = 0.0;
    for (int i = 0; i < p.speaker.embedding_dim; ++i) n += e.values()[b * p.speaker.embedding_dim + i] * e.values()[b * p.speaker.embedding_dim + i];
    EXPECT_NEAR(n, 1.0, 1e-6);
  }
}

TEST(ContentEncoder, BottleneckIsBoundedAndFrameAligned) {
  const auto p = tiny();
  const ContentEncoder enc(p.content, 6);
  const Tensor z = enc.encode(ad::constant(random_tensor({1, p.content.n_mels, 13}, 8, 10.0))).value();
  ASSERT_EQ(z.shape(), (Shape{1, p.content.bottleneck, 13}));
  for (double v : z.values()) {
    EXPECT_GT(v, -1.0);
    EXPECT_LT(v, 1.0);
  }
}

}  // namespace
}  // namespace vcd
