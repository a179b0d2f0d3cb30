// SPDX-License-Identifier: Apache-2.0
#include "vcd/ops_spectral.hpp"

#include <cmath>

#include "vcd/dsp.hpp"
#include "vcd/error.hpp"

namespace vcd::ad {

Var stft_magnitude(const Var& x, int n_fft, int hop, double eps) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2) throw ShapeError("stft_magnitude expects [B, N]");
  const int B = xv.dim(0), N = xv.dim(1);
  const int pad = n_fft / 2;
  if (N <= pad) throw ShapeError("stft_magnitude: signal shorter than half the FFT size");
  const int bins = n_fft / 2 + 1;
  const int frames = 1 + N / hop;
  const std::vector<double> window = dsp::hann_window(n_fft, n_fft);
  dsp::RealFft& fft = dsp::fft_plan(n_fft);

  Tensor mag({B, bins, frames});
  // Keep the complex spectrum for the backward pass.
  auto spectrum = std::make_shared<std::vector<dsp::Complex>>(static_cast<std::size_t>(B) * frames * bins);
  std::vector<double> frame(static_cast<std::size_t>(n_fft));
  std::vector<dsp::Complex> out(static_cast<std::size_t>(bins));
  for (int b = 0; b < B; ++b) {
    const std::vector<double> padded =
        dsp::reflect_pad(std::span<const double>(xv.data() + static_cast<std::size_t>(b) * N, N), pad);
    for (int f = 0; f < frames; ++f) {
      for (int n = 0; n < n_fft; ++n) frame[n] = padded[static_cast<std::size_t>(f) * hop + n] * window[n];
      fft.forward(frame, out);
      for (int k = 0; k < bins; ++k) {
        (*spectrum)[(static_cast<std::size_t>(b) * frames + f) * bins + k] = out[k];
        mag[(static_cast<std::size_t>(b) * bins + k) * frames + f] = std::sqrt(std::norm(out[k]) + eps);
      }
    }
  }

  return make_op(std::move(mag), {x}, [spectrum, window, B, N, n_fft, hop, pad, bins, frames](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    Tensor& g = in.grad_buffer();
    dsp::RealFft& fft = dsp::fft_plan(n_fft);
    std::vector<dsp::Complex> spec_grad(static_cast<std::size_t>(bins));
    std::vector<double> frame_grad(static_cast<std::size_t>(n_fft));
    std::vector<double> padded_grad(static_cast<std::size_t>(N + 2 * pad));
    for (int b = 0; b < B; ++b) {
      std::fill(padded_grad.begin(), padded_grad.end(), 0.0);
      for (int f = 0; f < frames; ++f) {
        for (int k = 0; k < bins; ++k) {
          const dsp::Complex z = (*spectrum)[(static_cast<std::size_t>(b) * frames + f) * bins + k];
          const double m = self.value[(static_cast<std::size_t>(b) * bins + k) * frames + f];
          const double up = self.grad[(static_cast<std::size_t>(b) * bins + k) * frames + f];
          // d|X|/d(re, im) = (re, im) / |X|; the inverse real FFT counts
          // interior bins twice, hence the halving.
          const double w = (k == 0 || k == bins - 1) ? 1.0 : 0.5;
          spec_grad[k] = w * up / m * z;
        }
        fft.inverse(spec_grad, frame_grad);
        for (int n = 0; n < n_fft; ++n) padded_grad[static_cast<std::size_t>(f) * hop + n] += frame_grad[n] * window[n];
      }
      double* gx = g.data() + static_cast<std::size_t>(b) * N;
      for (int i = 0; i < N + 2 * pad; ++i) {
        int s = i - pad;
        if (s < 0) s = -s;
        if (s >= N) s = 2 * (N - 1) - s;
        gx[s] += padded_grad[static_cast<std::size_t>(i)];
      }
    }
  });
}

}  // namespace vcd::ad
