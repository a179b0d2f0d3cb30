// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "vcd/config.hpp"
#include "vcd/layers.hpp"
#include "vcd/schedule.hpp"

namespace vcd {

using ad::Var;

struct NoisePredictorConfig {
  int n_mels = 80;
  int hidden = 64;
  int n_layers = 6;  // 6 + 6r with r residual blocks per level
  int kernel = 5;
  int time_dim = 64;
  int speaker_dim = 64;
  int content_dim = 16;
  // Adds sqrt(1 - abar_t) * x_t to the network output; needs the noise schedule.
  bool input_skip = true;
  void validate() const;
  void to_kv(KeyValues& kv, const std::string& prefix) const;
  static NoisePredictorConfig from_kv(const KeyValues& kv, const std::string& prefix);
};

struct SpeakerEncoderConfig {
  int n_mels = 80;
  int channels = 64;
  int layers = 4;
  int kernel = 5;
  int embedding_dim = 64;
  void to_kv(KeyValues& kv, const std::string& prefix) const;
  static SpeakerEncoderConfig from_kv(const KeyValues& kv, const std::string& prefix);
};

struct ContentEncoderConfig {
  int n_mels = 80;
  int hidden = 64;
  int bottleneck = 16;
  int n_classes = 6;  // 0 selects a reconstruction head
  void to_kv(KeyValues& kv, const std::string& prefix) const;
  static ContentEncoderConfig from_kv(const KeyValues& kv, const std::string& prefix);
};

struct VocoderConfig {
  int n_mels = 80;
  std::vector<int> channels{64, 32, 16, 8};
  std::vector<int> upsample{4, 8, 8};
  int hop() const;
  void to_kv(KeyValues& kv, const std::string& prefix) const;
  static VocoderConfig from_kv(const KeyValues& kv, const std::string& prefix);
};

struct DiscriminatorConfig {
  std::vector<int> fft_sizes{512, 1024, 2048};
  int channels = 32;
  void to_kv(KeyValues& kv, const std::string& prefix) const;
  static DiscriminatorConfig from_kv(const KeyValues& kv, const std::string& prefix);
};

struct NetworkPreset {
  std::string name;
  NoisePredictorConfig predictor;
  SpeakerEncoderConfig speaker;
  ContentEncoderConfig content;
  VocoderConfig vocoder;
  DiscriminatorConfig discriminator;
};

// "toy", "paper" or "tiny" (gradient checks, < 5000 parameters per network).
NetworkPreset network_preset(const std::string& name);

// Sinusoidal embedding: first half sin(t w_i), second half cos(t w_i),
// w_i = 10000^(-i / (dim/2 - 1)).
std::vector<double> encode_time(double t, int dim);
Tensor time_embedding(std::span<const int> t, int dim);

class NoisePredictor {
 public:
  static constexpr int kDownsample = 4;

  // `schedule` is required iff cfg.input_skip; only its abar table is kept.
  NoisePredictor(const NoisePredictorConfig& cfg, std::uint64_t seed, const NoiseSchedule* schedule = nullptr);

  // x[B, n_mels, F] with F divisible by 4, s[B, speaker_dim], p[B, content_dim, F].
  Var forward(const Var& x, std::span<const int> t, const Var& s, const Var& p) const;
  Var operator()(const Var& x, std::span<const int> t, const Var& s, const Var& p) const { return forward(x, t, s, p); }

  nn::ParamSet& params() noexcept { return params_; }
  const nn::ParamSet& params() const noexcept { return params_; }
  const NoisePredictorConfig& config() const noexcept { return cfg_; }

 private:
  struct Block {
    nn::Conv1d conv;
    nn::ConvTranspose1d up;
    bool transposed = false;
    bool residual = false;
    int level = 0;
    nn::Linear cond;
    nn::Conv1d content;
  };
  Var run_block(const Block& b, const Var& h, const Var& cond, const std::vector<Var>& p_levels) const;

  NoisePredictorConfig cfg_;
  nn::ParamSet params_;
  nn::Linear time1_, time2_;
  std::vector<Block> encoder_, middle_, decoder_;
  Block in_, down1_, down2_, up2_, up1_;
  nn::Conv1d out_;
  std::vector<double> skip_;  // sqrt(1 - abar_t), index t
};

class SpeakerEncoder {
 public:
  SpeakerEncoder(const SpeakerEncoderConfig& cfg, std::uint64_t seed);
  // mel[B, n_mels, F] -> unit-norm [B, embedding_dim]. Convolutions pad circularly.
  Var embed(const Var& mel) const;
  nn::ParamSet& params() noexcept { return params_; }
  const nn::ParamSet& params() const noexcept { return params_; }
  const SpeakerEncoderConfig& config() const noexcept { return cfg_; }

 private:
  SpeakerEncoderConfig cfg_;
  nn::ParamSet params_;
  std::vector<nn::Conv1d> convs_;
  nn::Linear proj_;
};

class ContentEncoder {
 public:
  ContentEncoder(const ContentEncoderConfig& cfg, std::uint64_t seed);
  // mel[B, n_mels, F] -> bottleneck[B, bottleneck, F] in (-1, 1).
  Var encode(const Var& mel) const;
  // Classification logits [B, n_classes, F] or reconstruction [B, n_mels, F].
  Var head(const Var& bottleneck) const;
  nn::ParamSet& params() noexcept { return params_; }
  const nn::ParamSet& params() const noexcept { return params_; }
  const ContentEncoderConfig& config() const noexcept { return cfg_; }

 private:
  ContentEncoderConfig cfg_;
  nn::ParamSet params_;
  nn::Conv1d c1_, c2_, c3_, head_;
};

class Vocoder {
 public:
  Vocoder(const VocoderConfig& cfg, std::uint64_t seed);
  // mel[B, n_mels, F] -> waveform [B, F * hop].
  Var forward(const Var& mel) const;
  nn::ParamSet& params() noexcept { return params_; }
  const nn::ParamSet& params() const noexcept { return params_; }
  const VocoderConfig& config() const noexcept { return cfg_; }

 private:
  struct Stage {
    nn::ConvTranspose1d up;
    nn::Conv1d res1, res2;
  };
  VocoderConfig cfg_;
  nn::ParamSet params_;
  nn::Conv1d pre_, post_;
  std::vector<Stage> stages_;
};

struct DiscriminatorOutput {
  std::vector<Var> scores;        // one [B, 1, frames'] map per resolution
  std::vector<Var> features;      // L maps, resolution-major
  std::vector<int> feature_resolution;
  // Elements of feature l per example.
  std::size_t feature_count(std::size_t l) const;
};

class Discriminator {
 public:
  static constexpr int kLayersPerResolution = 4;

  Discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed);
  DiscriminatorOutput forward(const Var& wav) const;
  int resolutions() const noexcept { return static_cast<int>(cfg_.fft_sizes.size()); }
  int layers() const noexcept { return resolutions() * kLayersPerResolution; }
  nn::ParamSet& params() noexcept { return params_; }
  const nn::ParamSet& params() const noexcept { return params_; }
  const DiscriminatorConfig& config() const noexcept { return cfg_; }

 private:
  DiscriminatorConfig cfg_;
  nn::ParamSet params_;
  std::vector<std::vector<nn::Conv1d>> convs_;
};

using PredictFn = std::function<Var(const Var& x_t, std::span<const int> t, const Var& s, const Var& p)>;

// Noise predictor handle that counts evaluations.
class Predictor {
 public:
  explicit Predictor(PredictFn fn) : fn_(std::move(fn)) {}
  explicit Predictor(const NoisePredictor& net)
      : fn_([&net](const Var& x, std::span<const int> t, const Var& s, const Var& p) { return net(x, t, s, p); }) {}
  Var operator()(const Var& x, std::span<const int> t, const Var& s, const Var& p) const {
    ++calls_;
    return fn_(x, t, s, p);
  }
  long calls() const noexcept { return calls_; }
  void reset_calls() noexcept { calls_ = 0; }

 private:
  PredictFn fn_;
  mutable long calls_ = 0;
};

}  // namespace vcd
