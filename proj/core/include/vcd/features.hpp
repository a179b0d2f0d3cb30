// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "vcd/audio.hpp"
#include "vcd/tensor.hpp"

namespace vcd {

struct FeatureConfig {
  int sample_rate = 22050;
  int fft_size = 1024;
  int hop = 256;
  int win = 1024;
  int n_mels = 80;
  double fmin = 0.0;
  double fmax = 11025.0;
  double log_floor = 1e-5;

  void validate() const;
  double frame_rate() const { return static_cast<double>(sample_rate) / hop; }
};

// Row-major [frames x bins] log-mel matrix.
struct MelSpectrogram {
  int frames = 0;
  int bins = 0;
  std::vector<double> data;

  MelSpectrogram() = default;
  MelSpectrogram(int frames_, int bins_, double fill = 0.0)
      : frames(frames_), bins(bins_), data(static_cast<std::size_t>(frames_) * bins_, fill) {}
  double& at(int f, int b) { return data[static_cast<std::size_t>(f) * bins + b]; }
  double at(int f, int b) const { return data[static_cast<std::size_t>(f) * bins + b]; }
  // First `n` frames; n must not exceed `frames`.
  MelSpectrogram head(int n) const;
  // Frames [begin, begin + n).
  MelSpectrogram crop(int begin, int n) const;
};

struct NormStats {
  std::vector<double> mean;
  std::vector<double> std;
  bool empty() const noexcept { return mean.empty(); }
};

// Slaney-scale conversions.
double hz_to_mel(double hz);
double mel_to_hz(double mel);
// Area-normalized triangular filters, row-major [n_mels x (fft_size / 2 + 1)].
std::vector<double> mel_filterbank(const FeatureConfig& cfg);

int frame_count(std::size_t length, const FeatureConfig& cfg);
MelSpectrogram mel_spectrogram(std::span<const double> wav, const FeatureConfig& cfg);

// Per-bin moments over every frame of every input; std is floored at 1e-3.
NormStats compute_stats(std::span<const MelSpectrogram> mels);
MelSpectrogram normalize(const MelSpectrogram& mel, const NormStats& stats);
MelSpectrogram denormalize(const MelSpectrogram& mel, const NormStats& stats);

// Pseudo-inverse filterbank followed by Griffin-Lim phase recovery. Debug aid only.
std::vector<double> mel_invert_diagnostic(const MelSpectrogram& log_mel, const FeatureConfig& cfg,
                                          int iterations = 32);

// Batches of mels as network input [B, bins, frames]; all mels must share a shape.
Tensor mels_to_tensor(std::span<const MelSpectrogram> mels);
Tensor mel_to_tensor(const MelSpectrogram& mel);
MelSpectrogram tensor_to_mel(const Tensor& t, int batch_index = 0);

}  // namespace vcd
