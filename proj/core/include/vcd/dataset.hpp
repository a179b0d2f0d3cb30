// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "vcd/corpus.hpp"
#include "vcd/features.hpp"
#include "vcd/random.hpp"

namespace vcd {

struct Example {
  std::string id;
  int speaker = 0;
  int script = 0;
  MelSpectrogram mel;         // normalized
  std::vector<int> labels;    // per-frame content class, empty when unknown
  std::vector<double> wav;    // optional, only when loaded with audio
};

struct Dataset {
  FeatureConfig features;
  NormStats stats;
  std::vector<Example> items;
  // Copy of the corpus split so subsets can be chosen without the corpus.
  int n_speakers = 0;
  int heldout_speakers = 0;
  int n_scripts = 0;
  int heldout_scripts = 0;

  bool train_speaker(int s) const { return s < n_speakers - heldout_speakers; }
  bool train_script(int c) const { return c < n_scripts - heldout_scripts; }
  std::vector<std::size_t> select(const std::function<bool(const Example&)>& pred) const;
  // Utterances of training speakers on training scripts.
  std::vector<std::size_t> train_indices() const;
  const Example& find(int speaker, int script) const;
};

// Extracts log-mels for the whole corpus, computes stats on the training split and normalizes.
Dataset build_dataset(const Corpus& corpus, const FeatureConfig& cfg, bool keep_audio = false);
// Writes index.tsv, one mel file per utterance, and stats/config into `dir`.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);
// Reads the waveforms referenced by `corpus` into the dataset items.
void attach_audio(Dataset& ds, const Corpus& corpus);

// Fixed-length frame window starting at `begin`; frames past the end repeat the last frame.
MelSpectrogram crop_or_pad(const MelSpectrogram& mel, int begin, int length);
int random_crop_start(int frames, int length, Rng& rng);

}  // namespace vcd
