// SPDX-License-Identifier: Apache-2.0
#include "vcd/networks.hpp"

#include <cmath>

#include "vcd/error.hpp"
#include "vcd/ops_spectral.hpp"
#include "vcd/random.hpp"

namespace vcd {

namespace {
constexpr double kVocoderSlope = 0.1;
constexpr double kDiscSlope = 0.2;
// Power floor inside the log-magnitude input. Smaller floors leave near-silent
// bins with curvature large enough to dominate the generator gradient.
constexpr double kDiscPowerFloor = 1e-6;
constexpr double kEncoderSlope = 0.2;
}  // namespace

void NoisePredictorConfig::validate() const {
  if (n_layers < 6 || (n_layers - 6) % 6 != 0) throw ConfigError("noise predictor layer count must be 6 + 6r");
  if (kernel < 1 || kernel % 2 == 0) throw ConfigError("noise predictor kernel must be odd");
  if (n_mels < 1 || hidden < 1 || time_dim < 4 || time_dim % 2 != 0 || speaker_dim < 1 || content_dim < 1) {
    throw ConfigError("noise predictor dimensions must be positive (time_dim even, >= 4)");
  }
}

void NoisePredictorConfig::to_kv(KeyValues& kv, const std::string& p) const {
  kv.set(p + "n_mels", n_mels);
  kv.set(p + "hidden", hidden);
  kv.set(p + "n_layers", n_layers);
  kv.set(p + "kernel", kernel);
  kv.set(p + "time_dim", time_dim);
  kv.set(p + "speaker_dim", speaker_dim);
  kv.set(p + "content_dim", content_dim);
  kv.set(p + "input_skip", input_skip);
}

NoisePredictorConfig NoisePredictorConfig::from_kv(const KeyValues& kv, const std::string& p) {
  NoisePredictorConfig c;
  c.n_mels = kv.get_int(p + "n_mels");
  c.hidden = kv.get_int(p + "hidden");
  c.n_layers = kv.get_int(p + "n_layers");
  c.kernel = kv.get_int(p + "kernel");
  c.time_dim = kv.get_int(p + "time_dim");
  c.speaker_dim = kv.get_int(p + "speaker_dim");
  c.content_dim = kv.get_int(p + "content_dim");
  c.input_skip = kv.get_bool(p + "input_skip");
  c.validate();
  return c;
}

void SpeakerEncoderConfig::to_kv(KeyValues& kv, const std::string& p) const {
  kv.set(p + "n_mels", n_mels);
  kv.set(p + "channels", channels);
  kv.set(p + "layers", layers);
  kv.set(p + "kernel", kernel);
  kv.set(p + "embedding_dim", embedding_dim);
}

SpeakerEncoderConfig SpeakerEncoderConfig::from_kv(const KeyValues& kv, const std::string& p) {
  SpeakerEncoderConfig c;
  c.n_mels = kv.get_int(p + "n_mels");
  c.channels = kv.get_int(p + "channels");
  c.layers = kv.get_int(p + "layers");
  c.kernel = kv.get_int(p + "kernel");
  c.embedding_dim = kv.get_int(p + "embedding_dim");
  return c;
}

void ContentEncoderConfig::to_kv(KeyValues& kv, const std::string& p) const {
  kv.set(p + "n_mels", n_mels);
  kv.set(p + "hidden", hidden);
  kv.set(p + "bottleneck", bottleneck);
  kv.set(p + "n_classes", n_classes);
}

ContentEncoderConfig ContentEncoderConfig::from_kv(const KeyValues& kv, const std::string& p) {
  ContentEncoderConfig c;
  c.n_mels = kv.get_int(p + "n_mels");
  c.hidden = kv.get_int(p + "hidden");
  c.bottleneck = kv.get_int(p + "bottleneck");
  c.n_classes = kv.get_int(p + "n_classes");
  return c;
}

int VocoderConfig::hop() const {
  int h = 1;
  for (int u : upsample) h *= u;
  return h;
}

void VocoderConfig::to_kv(KeyValues& kv, const std::string& p) const {
  kv.set(p + "n_mels", n_mels);
  kv.set(p + "channels", channels);
  kv.set(p + "upsample", upsample);
}

VocoderConfig VocoderConfig::from_kv(const KeyValues& kv, const std::string& p) {
  VocoderConfig c;
  c.n_mels = kv.get_int(p + "n_mels");
  c.channels = kv.get_ints(p + "channels");
  c.upsample = kv.get_ints(p + "upsample");
  if (c.channels.size() != c.upsample.size() + 1) throw ConfigError("vocoder needs one more channel entry than stages");
  return c;
}

void DiscriminatorConfig::to_kv(KeyValues& kv, const std::string& p) const {
  kv.set(p + "fft_sizes", fft_sizes);
  kv.set(p + "channels", channels);
}

DiscriminatorConfig DiscriminatorConfig::from_kv(const KeyValues& kv, const std::string& p) {
  DiscriminatorConfig c;
  c.fft_sizes = kv.get_ints(p + "fft_sizes");
  c.channels = kv.get_int(p + "channels");
  return c;
}

NetworkPreset network_preset(const std::string& name) {
  NetworkPreset p;
  p.name = name;
  if (name == "toy") return p;
  if (name == "paper") {
    p.predictor.hidden = 512;
    p.predictor.n_layers = 12;
    p.predictor.time_dim = 128;
    p.speaker.channels = 256;
    p.content.hidden = 256;
    p.vocoder.channels = {512, 256, 128, 64};
    p.discriminator.channels = 64;
    return p;
  }
  if (name == "tiny") {
    p.predictor = {8, 4, 6, 3, 4, 4, 2};
    p.speaker = {8, 4, 4, 3, 4};
    p.content = {8, 4, 2, 3};
    p.vocoder.n_mels = 8;
    p.vocoder.channels = {4, 2, 2, 2};
    p.discriminator.fft_sizes = {64, 128, 256};
    p.discriminator.channels = 4;
    return p;
  }
  throw ConfigError("unknown preset '" + name + "' (expected toy, paper or tiny)");
}

std::vector<double> encode_time(double t, int dim) {
  if (dim < 4 || dim % 2 != 0) throw ParameterError("time embedding dimension must be even and >= 4");
  const int half = dim / 2;
  std::vector<double> e(static_cast<std::size_t>(dim));
  for (int i = 0; i < half; ++i) {
    const double w = std::pow(10000.0, -static_cast<double>(i) / (half - 1));
    e[i] = std::sin(t * w);
    e[half + i] = std::cos(t * w);
  }
  return e;
}

Tensor time_embedding(std::span<const int> t, int dim) {
  Tensor out({static_cast<int>(t.size()), dim});
  for (std::size_t b = 0; b < t.size(); ++b) {
    const auto e = encode_time(t[b], dim);
    std::copy(e.begin(), e.end(), out.data() + b * dim);
  }
  return out;
}

// ---------------------------------------------------------------------------

NoisePredictor::NoisePredictor(const NoisePredictorConfig& cfg, std::uint64_t seed, const NoiseSchedule* schedule)
    : cfg_(cfg) {
  cfg_.validate();
  if (cfg_.input_skip) {
    if (schedule == nullptr) throw ConfigError("noise predictor with input skip needs the noise schedule");
    skip_.resize(schedule->alpha_bar.size());
    for (std::size_t t = 0; t < skip_.size(); ++t) skip_[t] = std::sqrt(1.0 - schedule->alpha_bar[t]);
  }
  Rng rng(seed);
  const int H = cfg_.hidden, K = cfg_.kernel;
  const int cond_in = H + cfg_.speaker_dim;
  time1_ = nn::Linear(params_, "time.0", cfg_.time_dim, H, rng);
  time2_ = nn::Linear(params_, "time.1", H, H, rng);
  int counter = 0;
  auto make = [&](int in, int level, int stride, bool transposed, bool residual) {
    Block b;
    const std::string name = "block" + std::to_string(counter++);
    if (transposed) {
      b.up = nn::ConvTranspose1d(params_, name + ".conv", in, 2 * H, 4, 2, 1, rng, true);
    } else {
      b.conv = nn::Conv1d(params_, name + ".conv", in, 2 * H, K, rng, true, stride);
    }
    b.transposed = transposed;
    b.residual = residual;
    b.level = level;
    b.cond = nn::Linear(params_, name + ".cond", cond_in, 2 * H, rng);
    b.content = nn::Conv1d(params_, name + ".content", cfg_.content_dim, 2 * H, 1, rng, false);
    return b;
  };
  const int r = (cfg_.n_layers - 6) / 6;
  in_ = make(cfg_.n_mels, 0, 1, false, false);
  for (int i = 0; i < r; ++i) encoder_.push_back(make(H, 0, 1, false, true));
  down1_ = make(H, 1, 2, false, false);
  for (int i = 0; i < r; ++i) encoder_.push_back(make(H, 1, 1, false, true));
  down2_ = make(H, 2, 2, false, false);
  for (int i = 0; i < 2 * r; ++i) middle_.push_back(make(H, 2, 1, false, true));
  up2_ = make(H, 1, 1, true, false);
  for (int i = 0; i < r; ++i) decoder_.push_back(make(H, 1, 1, false, true));
  up1_ = make(H, 0, 1, true, false);
  for (int i = 0; i < r; ++i) decoder_.push_back(make(H, 0, 1, false, true));
  out_ = nn::Conv1d(params_, "out", H, cfg_.n_mels, K, rng, true);
}

Var NoisePredictor::run_block(const Block& b, const Var& h, const Var& cond, const std::vector<Var>& p_levels) const {
  // Conditioning enters the pre-activation so it reaches the gate half of the GLU.
  Var y = ad::add_time_broadcast(b.transposed ? b.up(h) : b.conv(h), b.cond(cond));
  y = ad::glu(ad::add(y, b.content(p_levels[static_cast<std::size_t>(b.level)])));
  return b.residual ? ad::add(h, y) : y;
}

Var NoisePredictor::forward(const Var& x, std::span<const int> t, const Var& s, const Var& p) const {
  if (x.value().rank() != 3 || x.dim(1) != cfg_.n_mels) {
    throw ShapeError("noise predictor input must be [B, " + std::to_string(cfg_.n_mels) + ", F], got " +
                     to_string(x.shape()));
  }
  const int B = x.dim(0), F = x.dim(2);
  if (F % kDownsample != 0) throw ShapeError("frame count " + std::to_string(F) + " is not divisible by 4");
  if (static_cast<int>(t.size()) != B) throw ShapeError("need one diffusion step per batch element");
  if (s.value().rank() != 2 || s.dim(0) != B || s.dim(1) != cfg_.speaker_dim) {
    throw ShapeError("speaker embedding must be [B, speaker_dim], got " + to_string(s.shape()));
  }
  if (p.value().rank() != 3 || p.dim(0) != B || p.dim(1) != cfg_.content_dim || p.dim(2) != F) {
    throw ShapeError("content embedding " + to_string(p.shape()) + " is not aligned with mel " + to_string(x.shape()));
  }
  Var temb = ad::constant(time_embedding(t, cfg_.time_dim));
  temb = ad::silu(time2_(ad::silu(time1_(temb))));
  const Var cond = ad::concat({temb, s}, 1);
  const std::vector<Var> p_levels{p, ad::avg_pool_time(p, 2), ad::avg_pool_time(p, 4)};

  const int r = (cfg_.n_layers - 6) / 6;
  Var h = run_block(in_, x, cond, p_levels);
  for (int i = 0; i < r; ++i) h = run_block(encoder_[i], h, cond, p_levels);
  const Var skip0 = h;
  h = run_block(down1_, h, cond, p_levels);
  for (int i = r; i < 2 * r; ++i) h = run_block(encoder_[i], h, cond, p_levels);
  const Var skip1 = h;
  h = run_block(down2_, h, cond, p_levels);
  for (const auto& b : middle_) h = run_block(b, h, cond, p_levels);
  h = ad::add(run_block(up2_, h, cond, p_levels), skip1);
  for (int i = 0; i < r; ++i) h = run_block(decoder_[i], h, cond, p_levels);
  h = ad::add(run_block(up1_, h, cond, p_levels), skip0);
  for (int i = r; i < 2 * r; ++i) h = run_block(decoder_[i], h, cond, p_levels);
  if (!cfg_.input_skip) return out_(h);
  std::vector<double> c(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b) {
    if (t[b] < 1 || t[b] >= static_cast<int>(skip_.size())) throw ParameterError("diffusion step out of range");
    c[static_cast<std::size_t>(b)] = skip_[static_cast<std::size_t>(t[b])];
  }
  return ad::add(out_(h), ad::scale_batch(x, c));
}

// ---------------------------------------------------------------------------

SpeakerEncoder::SpeakerEncoder(const SpeakerEncoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  Rng rng(seed);
  for (int l = 0; l < cfg_.layers; ++l) {
    convs_.emplace_back(params_, "conv" + std::to_string(l), l == 0 ? cfg_.n_mels : cfg_.channels, cfg_.channels,
                        cfg_.kernel, rng, false, 1, 1, ad::PadMode::circular);
  }
  proj_ = nn::Linear(params_, "proj", 2 * cfg_.channels, cfg_.embedding_dim, rng);
}

Var SpeakerEncoder::embed(const Var& mel) const {
  if (mel.value().rank() != 3 || mel.dim(1) != cfg_.n_mels) throw ShapeError("speaker encoder input must be [B, n_mels, F]");
  if (mel.dim(2) <= cfg_.kernel / 2) throw ShapeError("too few frames for the speaker encoder");
  Var h = mel;
  for (const auto& c : convs_) h = ad::leaky_relu(c(h), kEncoderSlope);
  return ad::l2_normalize_rows(proj_(ad::mean_std_pool(h)));
}

ContentEncoder::ContentEncoder(const ContentEncoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  Rng rng(seed);
  c1_ = nn::Conv1d(params_, "conv0", cfg_.n_mels, cfg_.hidden, 5, rng, false);
  c2_ = nn::Conv1d(params_, "conv1", cfg_.hidden, cfg_.hidden, 5, rng, false);
  c3_ = nn::Conv1d(params_, "bottleneck", cfg_.hidden, cfg_.bottleneck, 1, rng, false);
  const int out = cfg_.n_classes > 0 ? cfg_.n_classes : cfg_.n_mels;
  head_ = nn::Conv1d(params_, "head", cfg_.bottleneck, out, cfg_.n_classes > 0 ? 1 : 5, rng, false);
}

Var ContentEncoder::encode(const Var& mel) const {
  if (mel.value().rank() != 3 || mel.dim(1) != cfg_.n_mels) throw ShapeError("content encoder input must be [B, n_mels, F]");
  if (mel.dim(2) < 1) throw ShapeError("content encoder needs at least one frame");
  // Per-utterance mean removal.
  Var h = ad::add_time_broadcast(mel, ad::scale(ad::mean_pool_time(mel), -1.0));
  h = ad::leaky_relu(c1_(h), kEncoderSlope);
  h = ad::leaky_relu(c2_(h), kEncoderSlope);
  return ad::tanh(c3_(h));
}

Var ContentEncoder::head(const Var& bottleneck) const { return head_(bottleneck); }

Vocoder::Vocoder(const VocoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg_.channels.size() != cfg_.upsample.size() + 1) throw ConfigError("vocoder needs one more channel entry than stages");
  Rng rng(seed);
  pre_ = nn::Conv1d(params_, "pre", cfg_.n_mels, cfg_.channels[0], 7, rng, true);
  for (std::size_t i = 0; i < cfg_.upsample.size(); ++i) {
    const int u = cfg_.upsample[i];
    const int ci = cfg_.channels[i], co = cfg_.channels[i + 1];
    const std::string name = "stage" + std::to_string(i);
    Stage st;
    st.up = nn::ConvTranspose1d(params_, name + ".up", ci, co, 2 * u, u, u / 2, rng, true);
    st.res1 = nn::Conv1d(params_, name + ".res1", co, co, 3, rng, true, 1, 1);
    st.res2 = nn::Conv1d(params_, name + ".res2", co, co, 3, rng, true, 1, 3);
    stages_.push_back(std::move(st));
  }
  post_ = nn::Conv1d(params_, "post", cfg_.channels.back(), 1, 7, rng, true);
}

Var Vocoder::forward(const Var& mel) const {
  if (mel.value().rank() != 3 || mel.dim(1) != cfg_.n_mels) throw ShapeError("vocoder input must be [B, n_mels, F]");
  const int B = mel.dim(0);
  Var h = pre_(mel);
  for (const auto& st : stages_) {
    h = st.up(ad::leaky_relu(h, kVocoderSlope));
    Var r = st.res2(ad::leaky_relu(st.res1(ad::leaky_relu(h, kVocoderSlope)), kVocoderSlope));
    h = ad::add(h, r);
  }
  h = ad::tanh(post_(ad::leaky_relu(h, kVocoderSlope)));
  return ad::reshape(h, {B, h.dim(2)});
}

std::size_t DiscriminatorOutput::feature_count(std::size_t l) const {
  const Var& f = features.at(l);
  return f.size() / static_cast<std::size_t>(f.dim(0));
}

Discriminator::Discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg_.fft_sizes.empty()) throw ConfigError("discriminator needs at least one resolution");
  Rng rng(seed);
  const int C = cfg_.channels;
  for (std::size_t r = 0; r < cfg_.fft_sizes.size(); ++r) {
    const int bins = cfg_.fft_sizes[r] / 2 + 1;
    const std::string name = "res" + std::to_string(r);
    std::vector<nn::Conv1d> convs;
    convs.emplace_back(params_, name + ".conv0", bins, C, 3, rng, true);
    convs.emplace_back(params_, name + ".conv1", C, C, 3, rng, true, 2);
    convs.emplace_back(params_, name + ".conv2", C, C, 3, rng, true);
    convs.emplace_back(params_, name + ".out", C, 1, 3, rng, true);
    convs_.push_back(std::move(convs));
  }
}

DiscriminatorOutput Discriminator::forward(const Var& wav) const {
  if (wav.value().rank() != 2) throw ShapeError("discriminator input must be [B, N]");
  DiscriminatorOutput out;
  for (std::size_t r = 0; r < cfg_.fft_sizes.size(); ++r) {
    const int n = cfg_.fft_sizes[r];
    if (wav.dim(1) <= n / 2) throw ShapeError("waveform too short for FFT size " + std::to_string(n));
    Var h = ad::log(ad::stft_magnitude(wav, n, n / 4, kDiscPowerFloor));
    const auto& convs = convs_[r];
    for (std::size_t l = 0; l < convs.size(); ++l) {
      h = convs[l](h);
      if (l + 1 < convs.size()) h = ad::leaky_relu(h, kDiscSlope);
      out.features.push_back(h);
      out.feature_resolution.push_back(static_cast<int>(r));
    }
    out.scores.push_back(h);
  }
  return out;
}

}  // namespace vcd
