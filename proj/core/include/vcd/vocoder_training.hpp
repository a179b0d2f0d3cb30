// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vcd/dataset.hpp"
#include "vcd/networks.hpp"

namespace vcd {

struct VocoderTrainConfig {
  int steps = 1500;
  int batch = 4;
  double lr = 1e-3;
  int crop_frames = 32;
  std::vector<int> fft_sizes{512, 1024, 2048};
  int eval_every = 250;
};

struct VocoderTrainResult {
  double initial_val_loss = 0.0;
  double final_val_loss = 0.0;
  std::vector<std::pair<int, double>> curve;  // (step, validation loss)
};

// Sum over resolutions of spectral convergence plus mean absolute log-magnitude
// difference, with hop = fft / 4 and a Hann window of length fft.
Var multi_resolution_stft_loss(const Var& y_hat, const Var& y, std::span<const int> fft_sizes);

// Aligned (mel, waveform) crop pair; waveform sample n of frame window c maps to c * hop + n.
struct VocoderBatch {
  Tensor mel;  // [B, n_mels, frames]
  Tensor wav;  // [B, frames * hop]
};
VocoderBatch vocoder_batch(const Dataset& ds, std::span<const std::size_t> items, std::span<const int> starts,
                           int frames, int hop);

// Mean loss over fixed crops at the start of each utterance.
double vocoder_validation_loss(const Vocoder& voc, const Dataset& ds, std::span<const std::size_t> indices,
                               const VocoderTrainConfig& cfg);

VocoderTrainResult train_vocoder(Vocoder& voc, const Dataset& ds, std::span<const std::size_t> train,
                                 std::span<const std::size_t> validation, const VocoderTrainConfig& cfg,
                                 std::uint64_t seed);

}  // namespace vcd
