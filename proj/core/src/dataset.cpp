// SPDX-License-Identifier: Apache-2.0
#include "vcd/dataset.hpp"

#include <fstream>
#include <sstream>

#include "vcd/checkpoint.hpp"
#include "vcd/error.hpp"

namespace vcd {

std::vector<std::size_t> Dataset::select(const std::function<bool(const Example&)>& pred) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < items.size(); ++i)
    if (pred(items[i])) out.push_back(i);
  return out;
}

std::vector<std::size_t> Dataset::train_indices() const {
  return select([this](const Example& e) { return train_speaker(e.speaker) && train_script(e.script); });
}

const Example& Dataset::find(int speaker, int script) const {
  for (const auto& e : items)
    if (e.speaker == speaker && e.script == script) return e;
  throw DataError("dataset has no utterance for speaker " + std::to_string(speaker) + ", script " +
                  std::to_string(script));
}

Dataset build_dataset(const Corpus& corpus, const FeatureConfig& cfg, bool keep_audio) {
  cfg.validate();
  Dataset ds;
  ds.features = cfg;
  ds.n_speakers = corpus.spec.n_speakers;
  ds.heldout_speakers = corpus.spec.heldout_speakers;
  ds.n_scripts = corpus.spec.n_scripts;
  ds.heldout_scripts = corpus.spec.heldout_scripts;
  std::vector<MelSpectrogram> raw;
  std::vector<MelSpectrogram> train;
  for (const auto& u : corpus.utterances) {
    Waveform w = load_wav(corpus.wav_path(u), cfg.sample_rate);
    Example e;
    e.id = u.id;
    e.speaker = u.speaker;
    e.script = u.script;
    e.mel = mel_spectrogram(w.samples, cfg);
    e.labels = frame_labels(corpus.scripts.at(static_cast<std::size_t>(u.script)), e.mel.frames, cfg.hop,
                            cfg.sample_rate);
    if (keep_audio) e.wav = std::move(w.samples);
    if (corpus.train_speaker(u.speaker) && corpus.train_script(u.script)) train.push_back(e.mel);
    ds.items.push_back(std::move(e));
  }
  ds.stats = compute_stats(train);
  for (auto& e : ds.items) e.mel = normalize(e.mel, ds.stats);
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "mel");
  std::ostringstream index;
  for (const auto& e : ds.items) {
    write_mel_file(dir / "mel" / (e.id + ".mel"), e.mel);
    index << e.id << '\t' << e.speaker << '\t' << e.script << '\t';
    for (std::size_t i = 0; i < e.labels.size(); ++i) index << (i ? "," : "") << e.labels[i];
    index << '\n';
  }
  write_text_file(dir / "index.tsv", index.str());
  Checkpoint ck;
  ck.put_stats(ds.stats);
  const auto& f = ds.features;
  ck.meta.set("features.sample_rate", f.sample_rate);
  ck.meta.set("features.fft_size", f.fft_size);
  ck.meta.set("features.hop", f.hop);
  ck.meta.set("features.win", f.win);
  ck.meta.set("features.n_mels", f.n_mels);
  ck.meta.set("features.fmin", f.fmin);
  ck.meta.set("features.fmax", f.fmax);
  ck.meta.set("features.log_floor", f.log_floor);
  ck.meta.set("split.n_speakers", ds.n_speakers);
  ck.meta.set("split.heldout_speakers", ds.heldout_speakers);
  ck.meta.set("split.n_scripts", ds.n_scripts);
  ck.meta.set("split.heldout_scripts", ds.heldout_scripts);
  ck.save(dir / "stats.ckpt");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const auto stats_path = dir / "stats.ckpt";
  if (!std::filesystem::exists(stats_path)) throw DataError("missing feature statistics " + stats_path.string());
  const Checkpoint ck = Checkpoint::load(stats_path);
  Dataset ds;
  ds.stats = ck.stats();
  auto& f = ds.features;
  f.sample_rate = ck.meta.get_int("features.sample_rate");
  f.fft_size = ck.meta.get_int("features.fft_size");
  f.hop = ck.meta.get_int("features.hop");
  f.win = ck.meta.get_int("features.win");
  f.n_mels = ck.meta.get_int("features.n_mels");
  f.fmin = ck.meta.get_double("features.fmin");
  f.fmax = ck.meta.get_double("features.fmax");
  f.log_floor = ck.meta.get_double("features.log_floor");
  ds.n_speakers = ck.meta.get_int("split.n_speakers");
  ds.heldout_speakers = ck.meta.get_int("split.heldout_speakers");
  ds.n_scripts = ck.meta.get_int("split.n_scripts");
  ds.heldout_scripts = ck.meta.get_int("split.heldout_scripts");
  std::ifstream index(dir / "index.tsv");
  if (!index) throw DataError("missing feature index " + (dir / "index.tsv").string());
  std::string line;
  while (std::getline(index, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    Example e;
    std::string spk, scr, labels;
    std::getline(ss, e.id, '\t');
    std::getline(ss, spk, '\t');
    std::getline(ss, scr, '\t');
    std::getline(ss, labels, '\t');
    e.speaker = std::stoi(spk);
    e.script = std::stoi(scr);
    std::stringstream ls(labels);
    std::string cell;
    while (std::getline(ls, cell, ',')) e.labels.push_back(std::stoi(cell));
    e.mel = read_mel_file(dir / "mel" / (e.id + ".mel"));
    if (!e.labels.empty() && static_cast<int>(e.labels.size()) != e.mel.frames) {
      throw DataError("label count mismatch for " + e.id);
    }
    ds.items.push_back(std::move(e));
  }
  if (ds.items.empty()) throw DataError("feature directory " + dir.string() + " lists no utterances");
  return ds;
}

void attach_audio(Dataset& ds, const Corpus& corpus) {
  for (auto& e : ds.items) {
    const auto& u = corpus.find(e.speaker, e.script);
    e.wav = load_wav(corpus.wav_path(u), ds.features.sample_rate).samples;
  }
}

MelSpectrogram crop_or_pad(const MelSpectrogram& mel, int begin, int length) {
  if (mel.frames < 1) throw ShapeError("cannot crop an empty mel");
  MelSpectrogram out(length, mel.bins);
  for (int f = 0; f < length; ++f) {
    const int src = std::min(begin + f, mel.frames - 1);
    std::copy_n(mel.data.begin() + static_cast<std::ptrdiff_t>(src) * mel.bins, mel.bins,
                out.data.begin() + static_cast<std::ptrdiff_t>(f) * mel.bins);
  }
  return out;
}

int random_crop_start(int frames, int length, Rng& rng) {
  if (frames <= length) return 0;
  return rng.uniform_int(0, frames - length);
}

}  // namespace vcd
