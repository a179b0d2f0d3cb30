// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "vcd/config.hpp"
#include "vcd/features.hpp"
#include "vcd/layers.hpp"
#include "vcd/schedule.hpp"

namespace vcd {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Versioned container of named double tensors plus string metadata.
// Layout: "VCDCKPT\0", u32 version, metadata, tensors (name, rank, dims,
// f64 data), u64 FNV-1a checksum of all preceding bytes. Little-endian.
struct Checkpoint {
  KeyValues meta;
  std::map<std::string, Tensor> tensors;

  // Writes to a temporary file and renames, so readers never see a partial file.
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  void put_params(const std::string& prefix, const nn::ParamSet& params);
  void get_params(const std::string& prefix, nn::ParamSet& params) const;
  void put_schedule(const NoiseSchedule& sched);
  NoiseSchedule schedule() const;
  void put_stats(const NormStats& stats);
  NormStats stats() const;
  const Tensor& tensor(const std::string& name) const;
};

// "VCDMEL01", u32 frames, u32 bins, row-major float32 values.
void write_mel_file(const std::filesystem::path& path, const MelSpectrogram& mel);
MelSpectrogram read_mel_file(const std::filesystem::path& path);

// Atomic text write through a temporary sibling file.
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace vcd
