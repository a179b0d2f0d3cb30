// SPDX-License-Identifier: Apache-2.0
#include "vcd/features.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>

#include "vcd/dsp.hpp"
#include "vcd/error.hpp"

namespace vcd {

void FeatureConfig::validate() const {
  if (sample_rate <= 0) throw ConfigError("features.sample_rate must be positive");
  if (!(hop >= 1 && hop <= win && win <= fft_size)) throw ConfigError("features require hop <= win <= fft_size");
  if (fft_size % 2 != 0) throw ConfigError("features.fft_size must be even");
  if (n_mels < 1) throw ConfigError("features.n_mels must be at least 1");
  if (!(log_floor > 0.0)) throw ConfigError("features.log_floor must be positive");
  if (!(fmin >= 0.0 && fmin < fmax && fmax <= sample_rate / 2.0)) throw ConfigError("features need 0 <= fmin < fmax <= sr/2");
}

MelSpectrogram MelSpectrogram::head(int n) const { return crop(0, n); }

MelSpectrogram MelSpectrogram::crop(int begin, int n) const {
  if (begin < 0 || n < 0 || begin + n > frames) throw ShapeError("mel crop outside the available frames");
  MelSpectrogram out(n, bins);
  std::copy(data.begin() + static_cast<std::ptrdiff_t>(begin) * bins,
            data.begin() + static_cast<std::ptrdiff_t>(begin + n) * bins, out.data.begin());
  return out;
}

namespace {
constexpr double kMinLogHz = 1000.0;
constexpr double kLinearStep = 200.0 / 3.0;
constexpr double kMinLogMel = kMinLogHz / kLinearStep;
const double kLogStep = std::log(6.4) / 27.0;
}  // namespace

double hz_to_mel(double hz) {
  if (hz < kMinLogHz) return hz / kLinearStep;
  return kMinLogMel + std::log(hz / kMinLogHz) / kLogStep;
}

double mel_to_hz(double mel) {
  if (mel < kMinLogMel) return mel * kLinearStep;
  return kMinLogHz * std::exp(kLogStep * (mel - kMinLogMel));
}

std::vector<double> mel_filterbank(const FeatureConfig& cfg) {
  cfg.validate();
  const int bins = cfg.fft_size / 2 + 1;
  std::vector<double> edges(static_cast<std::size_t>(cfg.n_mels) + 2);
  const double lo = hz_to_mel(cfg.fmin), hi = hz_to_mel(cfg.fmax);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / (cfg.n_mels + 1));
  }
  std::vector<double> fb(static_cast<std::size_t>(cfg.n_mels) * bins, 0.0);
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double f0 = edges[m], f1 = edges[m + 1], f2 = edges[m + 2];
    const double enorm = 2.0 / (f2 - f0);
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / cfg.fft_size;
      const double w = std::max(0.0, std::min((f - f0) / (f1 - f0), (f2 - f) / (f2 - f1)));
      fb[static_cast<std::size_t>(m) * bins + k] = w * enorm;
    }
  }
  return fb;
}

int frame_count(std::size_t length, const FeatureConfig& cfg) {
  return 1 + static_cast<int>(length / static_cast<std::size_t>(cfg.hop));
}

MelSpectrogram mel_spectrogram(std::span<const double> wav, const FeatureConfig& cfg) {
  cfg.validate();
  if (wav.size() < static_cast<std::size_t>(cfg.win)) {
    throw DataError("waveform of " + std::to_string(wav.size()) + " samples is shorter than the " +
                    std::to_string(cfg.win) + "-sample window");
  }
  const dsp::Spectrum spec = dsp::stft(wav, cfg.fft_size, cfg.hop, cfg.win);
  const std::vector<double> fb = mel_filterbank(cfg);
  MelSpectrogram mel(spec.frames, cfg.n_mels);
  std::vector<double> power(static_cast<std::size_t>(spec.bins));
  for (int f = 0; f < spec.frames; ++f) {
    for (int k = 0; k < spec.bins; ++k) power[k] = std::norm(spec.at(f, k));
    for (int m = 0; m < cfg.n_mels; ++m) {
      const double* row = fb.data() + static_cast<std::size_t>(m) * spec.bins;
      double acc = 0.0;
      for (int k = 0; k < spec.bins; ++k) acc += row[k] * power[k];
      mel.at(f, m) = std::log(std::max(acc, cfg.log_floor));
    }
  }
  return mel;
}

NormStats compute_stats(std::span<const MelSpectrogram> mels) {
  if (mels.empty()) throw DataError("cannot compute normalization statistics of an empty set");
  const int bins = mels.front().bins;
  std::vector<double> sum(bins, 0.0), sq(bins, 0.0);
  double n = 0.0;
  for (const auto& m : mels) {
    if (m.bins != bins) throw ShapeError("mels with different bin counts");
    for (int f = 0; f < m.frames; ++f)
      for (int b = 0; b < bins; ++b) sum[b] += m.at(f, b);
    n += m.frames;
  }
  NormStats st;
  st.mean.resize(bins);
  st.std.resize(bins);
  for (int b = 0; b < bins; ++b) st.mean[b] = sum[b] / n;
  for (const auto& m : mels)
    for (int f = 0; f < m.frames; ++f)
      for (int b = 0; b < bins; ++b) {
        const double d = m.at(f, b) - st.mean[b];
        sq[b] += d * d;
      }
  for (int b = 0; b < bins; ++b) st.std[b] = std::max(std::sqrt(sq[b] / n), 1e-3);
  return st;
}

namespace {
void check_stats(const MelSpectrogram& mel, const NormStats& stats) {
  if (stats.empty()) throw DataError("normalization statistics are missing");
  if (static_cast<int>(stats.mean.size()) != mel.bins || stats.std.size() != stats.mean.size()) {
    throw ShapeError("normalization statistics do not match the mel bin count");
  }
}
}  // namespace

MelSpectrogram normalize(const MelSpectrogram& mel, const NormStats& stats) {
  check_stats(mel, stats);
  MelSpectrogram out = mel;
  for (int f = 0; f < mel.frames; ++f)
    for (int b = 0; b < mel.bins; ++b) out.at(f, b) = (mel.at(f, b) - stats.mean[b]) / stats.std[b];
  return out;
}

MelSpectrogram denormalize(const MelSpectrogram& mel, const NormStats& stats) {
  check_stats(mel, stats);
  MelSpectrogram out = mel;
  for (int f = 0; f < mel.frames; ++f)
    for (int b = 0; b < mel.bins; ++b) out.at(f, b) = mel.at(f, b) * stats.std[b] + stats.mean[b];
  return out;
}

std::vector<double> mel_invert_diagnostic(const MelSpectrogram& log_mel, const FeatureConfig& cfg, int iterations) {
  cfg.validate();
  if (log_mel.bins != cfg.n_mels) throw ShapeError("mel bin count does not match the feature config");
  if (log_mel.frames < 1) throw ShapeError("mel has no frames");
  const int bins = cfg.fft_size / 2 + 1;
  const std::vector<double> fb = mel_filterbank(cfg);
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::Map<const RowMat> F(fb.data(), cfg.n_mels, bins);
  const RowMat pinv = F.completeOrthogonalDecomposition().pseudoInverse();

  dsp::Spectrum mag;
  mag.frames = log_mel.frames;
  mag.bins = bins;
  mag.data.assign(static_cast<std::size_t>(mag.frames) * bins, {0.0, 0.0});
  Eigen::VectorXd p(cfg.n_mels);
  for (int f = 0; f < log_mel.frames; ++f) {
    for (int m = 0; m < cfg.n_mels; ++m) p[m] = std::max(0.0, std::exp(log_mel.at(f, m)) - cfg.log_floor);
    const Eigen::VectorXd lin = pinv * p;
    for (int k = 0; k < bins; ++k) mag.at(f, k) = std::sqrt(std::max(lin[k], 0.0));
  }
  const int length = (log_mel.frames - 1) * cfg.hop;
  dsp::Spectrum spec = mag;
  std::vector<double> wav = dsp::istft(spec, cfg.fft_size, cfg.hop, cfg.win, length);
  for (int it = 0; it < iterations && length >= cfg.win; ++it) {
    const dsp::Spectrum est = dsp::stft(wav, cfg.fft_size, cfg.hop, cfg.win);
    const int frames = std::min(est.frames, mag.frames);
    for (int f = 0; f < frames; ++f)
      for (int k = 0; k < bins; ++k) {
        const auto z = est.at(f, k);
        const double a = std::abs(z);
        spec.at(f, k) = a > 1e-12 ? z / a * mag.at(f, k).real() : dsp::Complex(mag.at(f, k).real(), 0.0);
      }
    wav = dsp::istft(spec, cfg.fft_size, cfg.hop, cfg.win, length);
  }
  return wav;
}

Tensor mels_to_tensor(std::span<const MelSpectrogram> mels) {
  if (mels.empty()) throw ShapeError("empty mel batch");
  const int F = mels.front().frames, M = mels.front().bins;
  Tensor t({static_cast<int>(mels.size()), M, F});
  for (std::size_t i = 0; i < mels.size(); ++i) {
    if (mels[i].frames != F || mels[i].bins != M) throw ShapeError("mel batch with mixed shapes");
    double* dst = t.data() + i * static_cast<std::size_t>(M) * F;
    for (int f = 0; f < F; ++f)
      for (int m = 0; m < M; ++m) dst[static_cast<std::size_t>(m) * F + f] = mels[i].at(f, m);
  }
  return t;
}

Tensor mel_to_tensor(const MelSpectrogram& mel) { return mels_to_tensor(std::span<const MelSpectrogram>(&mel, 1)); }

MelSpectrogram tensor_to_mel(const Tensor& t, int batch_index) {
  if (t.rank() != 3) throw ShapeError("mel tensor must be [B, bins, frames]");
  const int M = t.dim(1), F = t.dim(2);
  if (batch_index < 0 || batch_index >= t.dim(0)) throw ShapeError("batch index out of range");
  MelSpectrogram mel(F, M);
  const double* src = t.data() + static_cast<std::size_t>(batch_index) * M * F;
  for (int f = 0; f < F; ++f)
    for (int m = 0; m < M; ++m) mel.at(f, m) = src[static_cast<std::size_t>(m) * F + f];
  return mel;
}

}  // namespace vcd
