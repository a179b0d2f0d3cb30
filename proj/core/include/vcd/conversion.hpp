// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vcd/features.hpp"
#include "vcd/networks.hpp"
#include "vcd/schedule.hpp"

namespace vcd {

enum class InitMode { clean_source, diffused_source, pure_noise };
InitMode parse_init_mode(const std::string& name);
std::string to_string(InitMode mode);

struct ConversionRequest {
  MelSpectrogram source;  // normalized x_0^src
  Tensor s_tgt;           // [speaker_dim]
  Tensor p_src;           // [content_dim, source.frames]
  int K = 30;
  int s_first = 50;
  int s_last = 950;
  InitMode init = InitMode::clean_source;
  std::uint64_t seed = 0;
};

struct ConversionResult {
  MelSpectrogram mel;
  long predictor_calls = 0;
  Tensor initial_state;  // [1, n_mels, padded frames]
  std::vector<int> steps;
};

// Initial state for the reverse chain started at step `s_k`; the Rng is advanced
// only when noise is drawn.
Tensor initial_state(const Tensor& x_src, InitMode mode, int s_k, const NoiseSchedule& sched, Rng& rng);

// Reverse diffusion over a linear K-step ladder from s_last down to s_first,
// drawing z ~ N(0, I) at every step except the last. Frames are edge-padded to a
// multiple of 4 and cropped back.
ConversionResult convert_multistep(const ConversionRequest& req, const Predictor& predictor, const NoiseSchedule& sched);
// One denoise_mean step from the diffused source at s_last; identical to
// convert_multistep with K = 1 and diffused_source initialization.
ConversionResult convert_fast(const ConversionRequest& req, const Predictor& predictor, const NoiseSchedule& sched);

struct SweepRow {
  int s_k = 0;
  InitMode mode = InitMode::clean_source;
  double quality_proxy = 0.0;
  double sva_proxy = 0.0;
};

// Parses "begin:end:step" into an inclusive grid.
std::vector<int> parse_grid(const std::string& spec);

}  // namespace vcd
