// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <cmath>
#include <vector>

#include "vcd/conversion.hpp"
#include "vcd/features.hpp"
#include "vcd/networks.hpp"
#include "vcd/ops_conv.hpp"
#include "vcd/ops_spectral.hpp"
#include "vcd/random.hpp"
#include "vcd/schedule.hpp"

namespace {

using vcd::Tensor;
using vcd::ad::Var;

Tensor normal(vcd::Shape shape, std::uint64_t seed) {
  Tensor t(std::move(shape));
  vcd::Rng rng(seed);
  rng.fill_normal(t.values());
  return t;
}

// Arg: channels. Frames fixed at 64, kernel 5, same padding.
void BM_Conv1dForwardBackward(benchmark::State& state) {
  const int C = static_cast<int>(state.range(0));
  const Var x = vcd::ad::parameter(normal({4, C, 64}, 1));
  const Var w = vcd::ad::parameter(normal({C, C, 5}, 2));
  const Var b = vcd::ad::parameter(normal({C}, 3));
  const vcd::ad::Conv1dOptions opt{1, 2, 2, 1};
  for (auto _ : state) {
    Var y = vcd::ad::sum(vcd::ad::conv1d(x, w, b, opt));
    y.backward();
    benchmark::DoNotOptimize(w.grad().data());
  }
  state.SetItemsProcessed(state.iterations() * 4LL * C * C * 5 * 64);
}
BENCHMARK(BM_Conv1dForwardBackward)->Arg(16)->Arg(64)->Arg(128);

// Arg: FFT size; one second of 16 kHz audio.
void BM_StftMagnitude(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const Var x = vcd::ad::constant(normal({1, 16000}, 4));
  for (auto _ : state) {
    Var m = vcd::ad::stft_magnitude(x, n, n / 4);
    benchmark::DoNotOptimize(m.value().data());
  }
}
BENCHMARK(BM_StftMagnitude)->Arg(256)->Arg(512)->Arg(1024);

void BM_MelSpectrogram(benchmark::State& state) {
  vcd::FeatureConfig cfg;
  const Tensor wav = normal({cfg.sample_rate}, 5);
  for (auto _ : state) {
    auto mel = vcd::mel_spectrogram(wav.values(), cfg);
    benchmark::DoNotOptimize(mel.data.data());
  }
  state.SetLabel("1 s of audio");
}
BENCHMARK(BM_MelSpectrogram);

class ToyPredictor : public benchmark::Fixture {
 public:
  void SetUp(const benchmark::State&) override {
    preset = vcd::network_preset("toy");
    net = std::make_unique<vcd::NoisePredictor>(preset.predictor, 7, &sched);
  }
  void TearDown(const benchmark::State&) override { net.reset(); }

  vcd::ConversionRequest request(int frames, int K, vcd::InitMode init) const {
    const auto& c = preset.predictor;
    vcd::ConversionRequest req;
    req.source = vcd::tensor_to_mel(normal({1, c.n_mels, frames}, 8));
    req.s_tgt = normal({c.speaker_dim}, 9);
    req.p_src = normal({c.content_dim, frames}, 10);
    req.K = K;
    req.init = init;
    req.seed = 11;
    return req;
  }

  const vcd::NoiseSchedule sched = vcd::build_cosine_schedule(1000);
  vcd::NetworkPreset preset;
  std::unique_ptr<vcd::NoisePredictor> net;
};

// Arg: frames.
BENCHMARK_DEFINE_F(ToyPredictor, Forward)(benchmark::State& state) {
  const auto& c = preset.predictor;
  const int F = static_cast<int>(state.range(0));
  const Var x = vcd::ad::constant(normal({1, c.n_mels, F}, 12));
  const Var s = vcd::ad::constant(normal({1, c.speaker_dim}, 13));
  const Var p = vcd::ad::constant(normal({1, c.content_dim, F}, 14));
  const std::vector<int> t{500};
  vcd::ad::NoGradGuard guard;
  for (auto _ : state) {
    Var y = (*net)(x, t, s, p);
    benchmark::DoNotOptimize(y.value().data());
  }
}
BENCHMARK_REGISTER_F(ToyPredictor, Forward)->Arg(64)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);

// Arg: K. K = 1 uses the one-step path; the ratio of the two rows is the
// predictor-call speedup the distilled model buys.
BENCHMARK_DEFINE_F(ToyPredictor, Convert)(benchmark::State& state) {
  const int K = static_cast<int>(state.range(0));
  const vcd::Predictor fn(*net);
  const auto req = request(128, K, K == 1 ? vcd::InitMode::diffused_source : vcd::InitMode::clean_source);
  vcd::ad::NoGradGuard guard;
  for (auto _ : state) {
    auto r = K == 1 ? vcd::convert_fast(req, fn, sched) : vcd::convert_multistep(req, fn, sched);
    benchmark::DoNotOptimize(r.mel.data.data());
  }
  state.counters["calls"] = static_cast<double>(K);
}
BENCHMARK_REGISTER_F(ToyPredictor, Convert)->Arg(1)->Arg(30)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
