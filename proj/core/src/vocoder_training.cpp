// SPDX-License-Identifier: Apache-2.0
#include "vcd/vocoder_training.hpp"

#include <cmath>

#include "vcd/error.hpp"
#include "vcd/ops_spectral.hpp"
#include "vcd/optim.hpp"

namespace vcd {

Var multi_resolution_stft_loss(const Var& y_hat, const Var& y, std::span<const int> fft_sizes) {
  if (y_hat.shape() != y.shape()) throw ShapeError("vocoder loss needs equal waveform shapes");
  Var total;
  for (int n : fft_sizes) {
    const Var m_hat = ad::stft_magnitude(y_hat, n, n / 4, 1e-7);
    const Var m = ad::stft_magnitude(y, n, n / 4, 1e-7);
    const Var diff = ad::sub(m, m_hat);
    const Var sc = ad::scale(ad::sqrt(ad::add_scalar(ad::sum(ad::square(diff)), 1e-12)),
                             1.0 / std::sqrt(ad::sum(ad::square(m)).item() + 1e-12));
    const Var mag = ad::l1_loss(ad::log(m_hat), ad::log(m));
    const Var term = ad::add(sc, mag);
    total = total.defined() ? ad::add(total, term) : term;
  }
  return total;
}

VocoderBatch vocoder_batch(const Dataset& ds, std::span<const std::size_t> items, std::span<const int> starts,
                           int frames, int hop) {
  const int B = static_cast<int>(items.size());
  std::vector<MelSpectrogram> mels;
  VocoderBatch vb;
  vb.wav = Tensor({B, frames * hop});
  for (int b = 0; b < B; ++b) {
    const auto& e = ds.items[items[static_cast<std::size_t>(b)]];
    if (e.wav.empty()) throw DataError("vocoder training needs audio for " + e.id);
    const int start = starts[static_cast<std::size_t>(b)];
    mels.push_back(crop_or_pad(e.mel, start, frames));
    for (int n = 0; n < frames * hop; ++n) {
      const std::size_t src = static_cast<std::size_t>(start) * hop + n;
      vb.wav[static_cast<std::size_t>(b) * frames * hop + n] = src < e.wav.size() ? e.wav[src] : 0.0;
    }
  }
  vb.mel = mels_to_tensor(mels);
  return vb;
}

double vocoder_validation_loss(const Vocoder& voc, const Dataset& ds, std::span<const std::size_t> indices,
                               const VocoderTrainConfig& cfg) {
  if (indices.empty()) throw DataError("empty vocoder validation set");
  ad::NoGradGuard guard;
  double total = 0.0;
  for (std::size_t i : indices) {
    const int start = 0;
    const VocoderBatch vb = vocoder_batch(ds, std::span<const std::size_t>(&i, 1), std::span<const int>(&start, 1),
                                          cfg.crop_frames, voc.config().hop());
    total += multi_resolution_stft_loss(voc.forward(ad::constant(vb.mel)), ad::constant(vb.wav), cfg.fft_sizes).item();
  }
  return total / static_cast<double>(indices.size());
}

VocoderTrainResult train_vocoder(Vocoder& voc, const Dataset& ds, std::span<const std::size_t> train,
                                 std::span<const std::size_t> validation, const VocoderTrainConfig& cfg,
                                 std::uint64_t seed) {
  if (train.empty()) throw DataError("no utterances for vocoder training");
  if (cfg.steps < 1 || cfg.batch < 1 || cfg.crop_frames < 1) throw ConfigError("vocoder steps, batch and crop must be positive");
  if (voc.config().hop() != ds.features.hop) throw ConfigError("vocoder upsampling must equal the feature hop");
  Rng rng(seed);
  nn::Adam opt(voc.params().vars(), {cfg.lr, 0.9, 0.999, 1e-8, 1.0});
  VocoderTrainResult res;
  res.initial_val_loss = vocoder_validation_loss(voc, ds, validation, cfg);
  res.curve.emplace_back(0, res.initial_val_loss);
  const int hop = voc.config().hop();
  for (int step = 1; step <= cfg.steps; ++step) {
    std::vector<std::size_t> items;
    std::vector<int> starts;
    for (int b = 0; b < cfg.batch; ++b) {
      const std::size_t i = train[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(train.size()) - 1))];
      items.push_back(i);
      starts.push_back(random_crop_start(ds.items[i].mel.frames, cfg.crop_frames, rng));
    }
    const VocoderBatch vb = vocoder_batch(ds, items, starts, cfg.crop_frames, hop);
    opt.zero_grad();
    const Var loss = multi_resolution_stft_loss(voc.forward(ad::constant(vb.mel)), ad::constant(vb.wav), cfg.fft_sizes);
    if (!std::isfinite(loss.item())) throw NumericError("vocoder training diverged at step " + std::to_string(step));
    loss.backward();
    opt.step();
    if (step % cfg.eval_every == 0 || step == cfg.steps) {
      res.curve.emplace_back(step, vocoder_validation_loss(voc, ds, validation, cfg));
    }
  }
  res.final_val_loss = res.curve.back().second;
  return res;
}

}  // namespace vcd
