// SPDX-License-Identifier: Apache-2.0
#include "vcd/conversion.hpp"

#include <algorithm>
#include <sstream>

#include "vcd/dataset.hpp"
#include "vcd/error.hpp"

namespace vcd {

InitMode parse_init_mode(const std::string& name) {
  if (name == "clean_source") return InitMode::clean_source;
  if (name == "diffused_source") return InitMode::diffused_source;
  if (name == "pure_noise") return InitMode::pure_noise;
  throw ConfigError("unknown init mode '" + name + "' (expected clean_source, diffused_source or pure_noise)");
}

std::string to_string(InitMode mode) {
  switch (mode) {
    case InitMode::clean_source: return "clean_source";
    case InitMode::diffused_source: return "diffused_source";
    case InitMode::pure_noise: return "pure_noise";
  }
  return "?";
}

Tensor initial_state(const Tensor& x_src, InitMode mode, int s_k, const NoiseSchedule& sched, Rng& rng) {
  switch (mode) {
    case InitMode::clean_source:
      return x_src;
    case InitMode::diffused_source: {
      Tensor eps(x_src.shape());
      rng.fill_normal(eps.values());
      return forward_diffuse(x_src, s_k, eps, sched);
    }
    case InitMode::pure_noise: {
      Tensor eps(x_src.shape());
      rng.fill_normal(eps.values());
      return eps;
    }
  }
  throw ParameterError("invalid init mode");
}

namespace {

int padded_length(int frames) {
  const int d = NoisePredictor::kDownsample;
  return (frames + d - 1) / d * d;
}

Tensor padded_mel(const MelSpectrogram& mel, int frames) { return mel_to_tensor(crop_or_pad(mel, 0, frames)); }

}  // namespace

ConversionResult convert_multistep(const ConversionRequest& req, const Predictor& predictor, const NoiseSchedule& sched) {
  if (req.K < 1) throw ParameterError("K must be at least 1");
  if (req.source.frames < 1) throw ShapeError("source mel has no frames");
  if (req.p_src.rank() != 2 || req.p_src.dim(1) != req.source.frames) {
    throw ShapeError("content embedding " + to_string(req.p_src.shape()) + " is not aligned with the " +
                     std::to_string(req.source.frames) + "-frame source");
  }
  if (req.s_tgt.rank() != 1) throw ShapeError("target speaker embedding must be a vector");
  const SubSchedule sub = req.K == 1 ? subsequence_from_steps({req.s_last}, sched)
                                     : build_subsequence(req.K, req.s_first, req.s_last, sched);
  const int F = req.source.frames;
  const int Fp = padded_length(F);
  const int P = req.p_src.dim(0);

  Tensor p({1, P, Fp});
  for (int c = 0; c < P; ++c)
    for (int f = 0; f < Fp; ++f) p[static_cast<std::size_t>(c) * Fp + f] = req.p_src[static_cast<std::size_t>(c) * F + std::min(f, F - 1)];
  Tensor s = req.s_tgt.reshaped({1, req.s_tgt.dim(0)});
  const Var sv = ad::constant(s), pv = ad::constant(p);

  Rng rng(req.seed);
  const Tensor x_src = padded_mel(req.source, Fp);
  ConversionResult res;
  res.initial_state = initial_state(x_src, req.init, sub.S.back(), sched, rng);
  res.steps = sub.S;
  Tensor x = res.initial_state;
  const long calls_before = predictor.calls();
  ad::NoGradGuard guard;
  for (int k = sub.K; k >= 1; --k) {
    const int t = sub.S[static_cast<std::size_t>(k) - 1];
    const Tensor eps_hat = predictor(ad::constant(x), std::span<const int>(&t, 1), sv, pv).value();
    Tensor z(x.shape());
    if (k > 1) rng.fill_normal(z.values());
    x = reverse_step(x, k, eps_hat, z, sub);
  }
  res.predictor_calls = predictor.calls() - calls_before;
  res.mel = tensor_to_mel(x).head(F);
  return res;
}

ConversionResult convert_fast(const ConversionRequest& req, const Predictor& predictor, const NoiseSchedule& sched) {
  ConversionRequest one = req;
  one.K = 1;
  one.s_first = req.s_last;
  one.init = InitMode::diffused_source;
  return convert_multistep(one, predictor, sched);
}

std::vector<int> parse_grid(const std::string& spec) {
  std::stringstream ss(spec);
  std::string a, b, c;
  if (!std::getline(ss, a, ':') || !std::getline(ss, b, ':') || !std::getline(ss, c)) {
    throw ConfigError("grid must be begin:end:step, got '" + spec + "'");
  }
  int begin = 0, end = 0, step = 0;
  try {
    begin = std::stoi(a);
    end = std::stoi(b);
    step = std::stoi(c);
  } catch (const std::exception&) {
    throw ConfigError("grid must be begin:end:step, got '" + spec + "'");
  }
  if (step <= 0 || begin > end) throw ConfigError("grid needs step > 0 and begin <= end");
  std::vector<int> grid;
  for (int v = begin; v <= end; v += step) grid.push_back(v);
  if (grid.empty()) throw ConfigError("empty grid");
  return grid;
}

}  // namespace vcd
