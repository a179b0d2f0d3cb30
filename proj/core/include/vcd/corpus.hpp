// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vcd/audio.hpp"
#include "vcd/features.hpp"

namespace vcd {

// Vowel formant ratios relative to a speaker's neutral formants.
inline constexpr int kVowelCount = 6;

struct SyntheticSpeaker {
  int id = 0;
  double f0_base = 0.0;                 // Hz
  double f0_min = 0.0, f0_max = 0.0;    // reachable range over every script contour
  std::array<double, 3> formants{};     // neutral centre frequencies, Hz
  std::array<double, 3> bandwidths{};   // Hz
  double tilt = 1.0;                    // harmonic amplitude ~ h^-tilt
  double breathiness = 0.0;             // aspiration noise mix in [0, 1)
  double gain = 1.0;
};

struct Segment {
  double duration = 0.0;  // seconds
  int vowel = 0;          // formant-target index
  double contour_start = 1.0, contour_end = 1.0;  // f0 multipliers of f0_base
  double level = 1.0;
};

struct ContentScript {
  int id = 0;
  std::vector<Segment> segments;
  double duration() const;
  // Segment index active at time `seconds` (clamped to the last segment).
  int segment_at(double seconds) const;
  double contour_at(double seconds) const;
};

struct CorpusSpec {
  int n_speakers = 10;
  int n_scripts = 20;
  std::uint64_t seed = 7;
  int sample_rate = 22050;
  int heldout_speakers = 2;
  int heldout_scripts = 2;
  void validate() const;
};

struct Utterance {
  std::string id;
  int speaker = 0;
  int script = 0;
  std::filesystem::path wav_path;  // relative to the corpus root
};

struct Corpus {
  CorpusSpec spec;
  std::filesystem::path root;
  std::vector<SyntheticSpeaker> speakers;
  std::vector<ContentScript> scripts;
  std::vector<Utterance> utterances;

  bool train_speaker(int s) const { return s < spec.n_speakers - spec.heldout_speakers; }
  bool train_script(int c) const { return c < spec.n_scripts - spec.heldout_scripts; }
  const Utterance& find(int speaker, int script) const;
  std::filesystem::path wav_path(const Utterance& u) const { return root / u.wav_path; }
};

std::string utterance_id(int speaker, int script);

std::vector<SyntheticSpeaker> make_speakers(int n, std::uint64_t seed, int sample_rate = 22050);
std::vector<ContentScript> make_scripts(int n, std::uint64_t seed);
std::array<double, 3> vowel_formants(const SyntheticSpeaker& spk, int vowel);

Waveform render_utterance(const SyntheticSpeaker& spk, const ContentScript& script, int sample_rate,
                          std::uint64_t noise_seed);
// Per-frame vowel labels for a centred STFT with the given hop.
std::vector<int> frame_labels(const ContentScript& script, int frames, int hop, int sample_rate);

// Renders every (speaker, script) pair under `out_dir` and writes manifest.tsv,
// speakers.tsv, scripts.tsv, oracle_pairs.tsv and corpus.tsv.
Corpus generate_corpus(const CorpusSpec& spec, const std::filesystem::path& out_dir);
// Reads corpus.tsv and manifest.tsv; speaker and script definitions are re-derived from the seed.
Corpus load_corpus(const std::filesystem::path& dir);

// Mel of `tgt_speaker` rendering `script`, i.e. the ideal conversion of any source rendering of it.
MelSpectrogram oracle_target(const Corpus& corpus, int script, int tgt_speaker, const FeatureConfig& cfg);

// Fraction of (utterance, competing speaker) comparisons in which the utterance's
// mean log-mel over 200-3500 Hz lies closer to its own speaker's leave-one-out centroid.
double speaker_separability(const Corpus& corpus, const std::vector<MelSpectrogram>& mels, const FeatureConfig& cfg);

}  // namespace vcd
