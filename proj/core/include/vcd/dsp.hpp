// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <complex>
#include <span>
#include <vector>

namespace vcd::dsp {

using Complex = std::complex<double>;

// Real-input FFT of fixed length backed by FFTW. Data is copied through
// internally aligned buffers so every call uses the same codelets.
class RealFft {
 public:
  explicit RealFft(int n);
  ~RealFft();
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  int size() const noexcept { return n_; }
  int bins() const noexcept { return n_ / 2 + 1; }
  // X_k = sum_n x_n exp(-2 pi i k n / N), k = 0 .. N/2
  void forward(std::span<const double> in, std::span<Complex> out);
  // Unnormalized inverse assuming Hermitian symmetry: x_n = sum_k X_k exp(+2 pi i k n / N)
  void inverse(std::span<const Complex> in, std::span<double> out);

 private:
  int n_;
  double* real_;
  void* spectrum_;
  void* forward_plan_;
  void* inverse_plan_;
};

// Per-thread plan cache.
RealFft& fft_plan(int n);

// Periodic Hann window of length `win`, zero-padded and centred in `n_fft`.
std::vector<double> hann_window(int win, int n_fft);

std::vector<double> reflect_pad(std::span<const double> x, int pad);

struct Spectrum {
  int frames = 0;
  int bins = 0;
  std::vector<Complex> data;  // [frames x bins]
  Complex& at(int f, int k) { return data[static_cast<std::size_t>(f) * bins + k]; }
  const Complex& at(int f, int k) const { return data[static_cast<std::size_t>(f) * bins + k]; }
};

// Centred STFT with reflection padding of n_fft / 2; frames = 1 + len / hop.
Spectrum stft(std::span<const double> x, int n_fft, int hop, int win);

// Weighted overlap-add inverse of stft(); returns `length` samples.
std::vector<double> istft(const Spectrum& spec, int n_fft, int hop, int win, int length);

}  // namespace vcd::dsp
