// SPDX-License-Identifier: Apache-2.0
#include "vcd/dsp.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <numbers>

#include "vcd/error.hpp"

namespace vcd::dsp {

RealFft::RealFft(int n) : n_(n) {
  if (n < 2 || n % 2 != 0) throw ParameterError("FFT length must be even and >= 2");
  real_ = fftw_alloc_real(static_cast<std::size_t>(n));
  auto* spec = fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1));
  spectrum_ = spec;
  forward_plan_ = fftw_plan_dft_r2c_1d(n, real_, spec, FFTW_ESTIMATE);
  inverse_plan_ = fftw_plan_dft_c2r_1d(n, spec, real_, FFTW_ESTIMATE);
}

RealFft::~RealFft() {
  fftw_destroy_plan(static_cast<fftw_plan>(forward_plan_));
  fftw_destroy_plan(static_cast<fftw_plan>(inverse_plan_));
  fftw_free(real_);
  fftw_free(spectrum_);
}

void RealFft::forward(std::span<const double> in, std::span<Complex> out) {
  if (static_cast<int>(in.size()) != n_ || static_cast<int>(out.size()) != bins()) {
    throw ShapeError("RealFft::forward buffer size");
  }
  std::copy(in.begin(), in.end(), real_);
  fftw_execute(static_cast<fftw_plan>(forward_plan_));
  auto* spec = static_cast<fftw_complex*>(spectrum_);
  for (int k = 0; k < bins(); ++k) out[k] = Complex(spec[k][0], spec[k][1]);
}

void RealFft::inverse(std::span<const Complex> in, std::span<double> out) {
  if (static_cast<int>(in.size()) != bins() || static_cast<int>(out.size()) != n_) {
    throw ShapeError("RealFft::inverse buffer size");
  }
  auto* spec = static_cast<fftw_complex*>(spectrum_);
  for (int k = 0; k < bins(); ++k) {
    spec[k][0] = in[k].real();
    spec[k][1] = in[k].imag();
  }
  // c2r destroys its input; the buffer is rewritten on every call.
  fftw_execute(static_cast<fftw_plan>(inverse_plan_));
  std::copy(real_, real_ + n_, out.begin());
}

RealFft& fft_plan(int n) {
  thread_local std::map<int, std::unique_ptr<RealFft>> cache;
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<RealFft>(n);
  return *slot;
}

std::vector<double> hann_window(int win, int n_fft) {
  if (win < 1 || win > n_fft) throw ParameterError("window length must be in [1, n_fft]");
  std::vector<double> w(static_cast<std::size_t>(n_fft), 0.0);
  const int offset = (n_fft - win) / 2;
  for (int n = 0; n < win; ++n) {
    w[static_cast<std::size_t>(offset + n)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / win);
  }
  return w;
}

std::vector<double> reflect_pad(std::span<const double> x, int pad) {
  const int n = static_cast<int>(x.size());
  if (pad < 0) throw ParameterError("negative padding");
  if (pad >= n) throw ShapeError("reflection padding of " + std::to_string(pad) + " needs more than " +
                                 std::to_string(n) + " samples");
  std::vector<double> out(static_cast<std::size_t>(n + 2 * pad));
  for (int i = 0; i < n + 2 * pad; ++i) {
    int s = i - pad;
    if (s < 0) s = -s;
    if (s >= n) s = 2 * (n - 1) - s;
    out[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(s)];
  }
  return out;
}

Spectrum stft(std::span<const double> x, int n_fft, int hop, int win) {
  if (hop < 1) throw ParameterError("hop must be positive");
  const std::vector<double> window = hann_window(win, n_fft);
  const std::vector<double> padded = reflect_pad(x, n_fft / 2);
  Spectrum s;
  s.frames = 1 + static_cast<int>(x.size()) / hop;
  s.bins = n_fft / 2 + 1;
  s.data.resize(static_cast<std::size_t>(s.frames) * s.bins);
  RealFft& fft = fft_plan(n_fft);
  std::vector<double> frame(static_cast<std::size_t>(n_fft));
  for (int f = 0; f < s.frames; ++f) {
    const double* src = padded.data() + static_cast<std::size_t>(f) * hop;
    for (int n = 0; n < n_fft; ++n) frame[n] = src[n] * window[n];
    fft.forward(frame, std::span<Complex>(s.data.data() + static_cast<std::size_t>(f) * s.bins, s.bins));
  }
  return s;
}

std::vector<double> istft(const Spectrum& spec, int n_fft, int hop, int win, int length) {
  if (spec.bins != n_fft / 2 + 1) throw ShapeError("istft: bin count does not match n_fft");
  const std::vector<double> window = hann_window(win, n_fft);
  const int pad = n_fft / 2;
  const int total = (spec.frames - 1) * hop + n_fft;
  std::vector<double> acc(static_cast<std::size_t>(total), 0.0), norm(static_cast<std::size_t>(total), 0.0);
  RealFft& fft = fft_plan(n_fft);
  std::vector<double> frame(static_cast<std::size_t>(n_fft));
  for (int f = 0; f < spec.frames; ++f) {
    fft.inverse(std::span<const Complex>(spec.data.data() + static_cast<std::size_t>(f) * spec.bins, spec.bins), frame);
    for (int n = 0; n < n_fft; ++n) {
      const std::size_t i = static_cast<std::size_t>(f) * hop + n;
      acc[i] += frame[n] / n_fft * window[n];
      norm[i] += window[n] * window[n];
    }
  }
  std::vector<double> out(static_cast<std::size_t>(length), 0.0);
  for (int i = 0; i < length; ++i) {
    const int p = i + pad;
    if (p < total && norm[p] > 1e-8) out[i] = acc[p] / norm[p];
  }
  return out;
}

}  // namespace vcd::dsp
