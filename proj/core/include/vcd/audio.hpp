// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <span>
#include <vector>

namespace vcd {

struct Waveform {
  int sample_rate = 22050;
  std::vector<double> samples;  // mono, nominally in [-1, 1]
};

// Reads RIFF/WAVE with PCM 8/16/24/32-bit or IEEE float32 samples. Multi-channel
// input is averaged to mono.
Waveform read_wav(const std::filesystem::path& path);
// Writes 16-bit PCM mono; samples are clipped to [-1, 1 - 2^-15].
void write_wav(const std::filesystem::path& path, const Waveform& wav);
// read_wav followed by resampling to `target_rate` when needed.
Waveform load_wav(const std::filesystem::path& path, int target_rate = 22050);

// Band-limited resampling with a Kaiser-windowed sinc kernel.
std::vector<double> resample(std::span<const double> x, int from_rate, int to_rate);

double rms(std::span<const double> x);

}  // namespace vcd
