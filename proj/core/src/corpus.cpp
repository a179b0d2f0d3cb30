// SPDX-License-Identifier: Apache-2.0
#include "vcd/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "vcd/error.hpp"
#include "vcd/random.hpp"

namespace vcd {

namespace {

constexpr std::array<std::array<double, 3>, kVowelCount> kVowelRatios = {{
    {1.38, 0.85, 1.00},
    {0.68, 1.45, 1.12},
    {0.67, 0.60, 0.90},
    {0.95, 1.25, 1.05},
    {1.12, 0.66, 0.95},
    {0.80, 1.05, 1.20},
}};

constexpr double kContourLo = 0.9;
constexpr double kContourHi = 1.25;
constexpr double kTransition = 0.04;  // seconds of formant glide between segments
constexpr int kBlock = 32;            // samples per synthesis parameter update

double smoothstep(double x) {
  x = std::clamp(x, 0.0, 1.0);
  return x * x * (3.0 - 2.0 * x);
}

// Second-order resonance normalized to unit gain at DC.
double resonance(double f, double centre, double bandwidth) {
  const double r = f / centre;
  const double a = 1.0 - r * r;
  const double b = f * bandwidth / (centre * centre);
  return 1.0 / std::sqrt(a * a + b * b);
}

struct Biquad {
  double b0 = 0, b2 = 0, a1 = 0, a2 = 0, z1 = 0, z2 = 0;
  void set_bandpass(double centre, double bandwidth, int sr) {
    const double r = std::exp(-std::numbers::pi * bandwidth / sr);
    const double theta = 2.0 * std::numbers::pi * centre / sr;
    a1 = -2.0 * r * std::cos(theta);
    a2 = r * r;
    b0 = (1.0 - r * r) / 2.0;
    b2 = -b0;
  }
  double operator()(double x) {
    const double y = b0 * x + z1;
    z1 = -a1 * y + z2;
    z2 = b2 * x - a2 * y;
    return y;
  }
};

// Formants at time `sec`, gliding between vowel targets near segment boundaries.
std::array<double, 3> formants_at(const SyntheticSpeaker& spk, const ContentScript& script, double sec) {
  double start = 0.0;
  const int n = static_cast<int>(script.segments.size());
  for (int i = 0; i < n; ++i) {
    const double end = start + script.segments[i].duration;
    if (sec < end || i == n - 1) {
      std::array<double, 3> cur = vowel_formants(spk, script.segments[i].vowel);
      if (i + 1 < n && sec > end - kTransition / 2) {
        const auto next = vowel_formants(spk, script.segments[i + 1].vowel);
        const double w = smoothstep((sec - (end - kTransition / 2)) / kTransition) * 0.5;
        for (int k = 0; k < 3; ++k) cur[k] += w * (next[k] - cur[k]);
      } else if (i > 0 && sec < start + kTransition / 2) {
        const auto prev = vowel_formants(spk, script.segments[i - 1].vowel);
        const double w = 0.5 - smoothstep((sec - start + kTransition / 2) / kTransition) * 0.5;
        for (int k = 0; k < 3; ++k) cur[k] += w * (prev[k] - cur[k]);
      }
      return cur;
    }
    start = end;
  }
  return vowel_formants(spk, 0);
}

double level_at(const ContentScript& script, double sec) {
  return script.segments[static_cast<std::size_t>(script.segment_at(sec))].level;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, '\t')) out.push_back(cell);
  return out;
}

}  // namespace

void CorpusSpec::validate() const {
  if (n_speakers < 2) throw ConfigError("corpus.n_speakers must be at least 2");
  if (n_scripts < 1) throw ConfigError("corpus.n_scripts must be at least 1");
  if (sample_rate < 8000) throw ConfigError("corpus.sample_rate must be at least 8000");
  if (heldout_speakers < 0 || heldout_speakers >= n_speakers) throw ConfigError("corpus.heldout_speakers out of range");
  if (heldout_scripts < 0 || heldout_scripts >= n_scripts) throw ConfigError("corpus.heldout_scripts out of range");
}

double ContentScript::duration() const {
  double d = 0.0;
  for (const auto& s : segments) d += s.duration;
  return d;
}

int ContentScript::segment_at(double seconds) const {
  double end = 0.0;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    end += segments[i].duration;
    if (seconds < end) return static_cast<int>(i);
  }
  return static_cast<int>(segments.size()) - 1;
}

double ContentScript::contour_at(double seconds) const {
  double start = 0.0;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const double end = start + segments[i].duration;
    if (seconds < end || i + 1 == segments.size()) {
      const double u = std::clamp((seconds - start) / segments[i].duration, 0.0, 1.0);
      return segments[i].contour_start + u * (segments[i].contour_end - segments[i].contour_start);
    }
    start = end;
  }
  return 1.0;
}

const Utterance& Corpus::find(int speaker, int script) const {
  for (const auto& u : utterances)
    if (u.speaker == speaker && u.script == script) return u;
  throw DataError("no utterance for speaker " + std::to_string(speaker) + ", script " + std::to_string(script));
}

std::string utterance_id(int speaker, int script) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "spk%02d_scr%02d", speaker, script);
  return buf;
}

std::array<double, 3> vowel_formants(const SyntheticSpeaker& spk, int vowel) {
  if (vowel < 0 || vowel >= kVowelCount) throw ParameterError("vowel index out of range");
  std::array<double, 3> f{};
  for (int k = 0; k < 3; ++k) f[k] = spk.formants[k] * kVowelRatios[vowel][k];
  return f;
}

std::vector<SyntheticSpeaker> make_speakers(int n, std::uint64_t seed, int sample_rate) {
  std::vector<SyntheticSpeaker> out;
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, "speaker", static_cast<std::uint64_t>(i)));
    SyntheticSpeaker s;
    s.id = i;
    s.f0_base = rng.uniform(100.0, 240.0);
    s.f0_min = s.f0_base * kContourLo;
    s.f0_max = s.f0_base * kContourHi;
    s.formants = {rng.uniform(450.0, 650.0), rng.uniform(1300.0, 1900.0), rng.uniform(2300.0, 3100.0)};
    s.bandwidths = {rng.uniform(60.0, 110.0), rng.uniform(80.0, 150.0), rng.uniform(120.0, 220.0)};
    s.tilt = rng.uniform(0.7, 1.3);
    s.breathiness = rng.uniform(0.0, 0.3);
    for (int v = 0; v < kVowelCount; ++v) {
      const auto f = vowel_formants(s, v);
      if (!(f[0] < f[1] && f[1] < f[2])) throw NumericError("vowel formants are not increasing");
    }
    // Unit gain probe: RMS of a neutral 0.2 s vowel fixed at 0.1.
    ContentScript probe;
    probe.segments.push_back({0.2, 0, 1.0, 1.0, 1.0});
    const Waveform w = render_utterance(s, probe, sample_rate, 0);
    s.gain = 0.1 / std::max(rms(w.samples), 1e-9);
    out.push_back(s);
  }
  return out;
}

std::vector<ContentScript> make_scripts(int n, std::uint64_t seed) {
  std::vector<ContentScript> out;
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, "script", static_cast<std::uint64_t>(i)));
    ContentScript c;
    c.id = i;
    const int segs = rng.uniform_int(3, 8);
    const double total = rng.uniform(1.2, 2.4);
    std::vector<double> w(static_cast<std::size_t>(segs));
    double sum = 0.0;
    for (double& x : w) sum += (x = rng.uniform(0.6, 1.4));
    double knot = rng.uniform(kContourLo, kContourHi);
    int prev_vowel = -1;
    for (int k = 0; k < segs; ++k) {
      Segment s;
      s.duration = total * w[k] / sum;
      do {
        s.vowel = rng.uniform_int(0, kVowelCount - 1);
      } while (s.vowel == prev_vowel);
      prev_vowel = s.vowel;
      s.contour_start = knot;
      knot = rng.uniform(kContourLo, kContourHi);
      s.contour_end = knot;
      s.level = rng.uniform(0.7, 1.0);
      c.segments.push_back(s);
    }
    out.push_back(std::move(c));
  }
  return out;
}

Waveform render_utterance(const SyntheticSpeaker& spk, const ContentScript& script, int sample_rate,
                          std::uint64_t noise_seed) {
  const double total = script.duration();
  const std::size_t n = static_cast<std::size_t>(std::llround(total * sample_rate));
  Waveform wav;
  wav.sample_rate = sample_rate;
  wav.samples.assign(n, 0.0);
  Rng rng(noise_seed);
  std::array<Biquad, 3> noise_filters;
  const double nyquist = 0.95 * sample_rate / 2.0;
  std::vector<double> amp;
  double phase = 0.0;  // cycles
  const double ramp = 0.01 * sample_rate;
  for (std::size_t b0 = 0; b0 < n; b0 += kBlock) {
    const double sec = (static_cast<double>(b0) + kBlock / 2.0) / sample_rate;
    const double f0 = spk.f0_base * script.contour_at(sec);
    const auto formants = formants_at(spk, script, sec);
    const double level = level_at(script, sec);
    const int harmonics = static_cast<int>(nyquist / f0);
    amp.assign(static_cast<std::size_t>(harmonics) + 1, 0.0);
    for (int h = 1; h <= harmonics; ++h) {
      const double f = h * f0;
      double g = std::pow(static_cast<double>(h), -spk.tilt);
      for (int k = 0; k < 3; ++k) g *= resonance(f, formants[k], spk.bandwidths[k]);
      amp[h] = g;
    }
    for (int k = 0; k < 3; ++k) noise_filters[k].set_bandpass(formants[k], spk.bandwidths[k] * 2.0, sample_rate);
    const std::size_t b1 = std::min(n, b0 + kBlock);
    for (std::size_t i = b0; i < b1; ++i) {
      const double theta = 2.0 * std::numbers::pi * phase;
      // cos(h theta) by the Chebyshev recurrence.
      const double c1 = std::cos(theta);
      double prev = 1.0, cur = c1, voiced = 0.0;
      for (int h = 1; h <= harmonics; ++h) {
        voiced += amp[h] * cur;
        const double next = 2.0 * c1 * cur - prev;
        prev = cur;
        cur = next;
      }
      const double e = rng.normal();
      double aspir = 0.0;
      for (auto& f : noise_filters) aspir += f(e);
      double env = 1.0;
      const double pos = static_cast<double>(i);
      if (pos < ramp) env = pos / ramp;
      if (static_cast<double>(n - 1 - i) < ramp) env = std::min(env, static_cast<double>(n - 1 - i) / ramp);
      const double sample = (1.0 - spk.breathiness) * voiced + spk.breathiness * 0.5 * aspir;
      wav.samples[i] = spk.gain * level * env * sample;
      phase += f0 / sample_rate;
      phase -= std::floor(phase);
    }
  }
  return wav;
}

std::vector<int> frame_labels(const ContentScript& script, int frames, int hop, int sample_rate) {
  std::vector<int> labels(static_cast<std::size_t>(frames));
  for (int f = 0; f < frames; ++f) {
    const double sec = static_cast<double>(f) * hop / sample_rate;
    labels[f] = script.segments[static_cast<std::size_t>(script.segment_at(sec))].vowel;
  }
  return labels;
}

Corpus generate_corpus(const CorpusSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  namespace fs = std::filesystem;
  Corpus corpus;
  corpus.spec = spec;
  corpus.root = out_dir;
  corpus.speakers = make_speakers(spec.n_speakers, spec.seed, spec.sample_rate);
  corpus.scripts = make_scripts(spec.n_scripts, spec.seed);
  fs::create_directories(out_dir / "wav");

  for (const auto& spk : corpus.speakers) {
    for (const auto& scr : corpus.scripts) {
      Utterance u;
      u.id = utterance_id(spk.id, scr.id);
      u.speaker = spk.id;
      u.script = scr.id;
      u.wav_path = fs::path("wav") / (u.id + ".wav");
      const auto seed = derive_seed(spec.seed, "utterance", static_cast<std::uint64_t>(spk.id) * 100003u + scr.id);
      Waveform w = render_utterance(spk, scr, spec.sample_rate, seed);
      for (double x : w.samples)
        if (std::abs(x) >= 1.0) throw NumericError("rendered utterance " + u.id + " clips");
      write_wav(out_dir / u.wav_path, w);
      corpus.utterances.push_back(std::move(u));
    }
  }

  auto open = [&](const char* name) {
    std::ofstream f(out_dir / name);
    if (!f) throw DataError("cannot write " + (out_dir / name).string());
    f.precision(17);
    return f;
  };
  {
    auto f = open("corpus.tsv");
    f << "n_speakers\t" << spec.n_speakers << "\nn_scripts\t" << spec.n_scripts << "\nseed\t" << spec.seed
      << "\nsample_rate\t" << spec.sample_rate << "\nheldout_speakers\t" << spec.heldout_speakers
      << "\nheldout_scripts\t" << spec.heldout_scripts << "\n";
  }
  {
    auto f = open("manifest.tsv");
    for (const auto& u : corpus.utterances) f << u.id << '\t' << u.speaker << '\t' << u.wav_path.string() << '\n';
  }
  {
    auto f = open("speakers.tsv");
    f << "speaker_id\tf0_base\tf0_min\tf0_max\tF1\tF2\tF3\tB1\tB2\tB3\ttilt\tbreathiness\tsplit\n";
    for (const auto& s : corpus.speakers) {
      f << s.id << '\t' << s.f0_base << '\t' << s.f0_min << '\t' << s.f0_max;
      for (double x : s.formants) f << '\t' << x;
      for (double x : s.bandwidths) f << '\t' << x;
      f << '\t' << s.tilt << '\t' << s.breathiness << '\t' << (corpus.train_speaker(s.id) ? "train" : "heldout")
        << '\n';
    }
  }
  {
    auto f = open("scripts.tsv");
    f << "script_id\tsegment\tduration\tvowel\tcontour_start\tcontour_end\tlevel\tsplit\n";
    for (const auto& c : corpus.scripts)
      for (std::size_t k = 0; k < c.segments.size(); ++k) {
        const auto& s = c.segments[k];
        f << c.id << '\t' << k << '\t' << s.duration << '\t' << s.vowel << '\t' << s.contour_start << '\t'
          << s.contour_end << '\t' << s.level << '\t' << (corpus.train_script(c.id) ? "train" : "heldout") << '\n';
      }
  }
  {
    auto f = open("oracle_pairs.tsv");
    f << "source_utterance\ttarget_speaker\toracle_utterance\n";
    for (const auto& u : corpus.utterances)
      for (const auto& s : corpus.speakers)
        if (s.id != u.speaker) f << u.id << '\t' << s.id << '\t' << utterance_id(s.id, u.script) << '\n';
  }
  return corpus;
}

Corpus load_corpus(const std::filesystem::path& dir) {
  std::ifstream meta(dir / "corpus.tsv");
  if (!meta) throw DataError("missing corpus description " + (dir / "corpus.tsv").string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(meta, line)) {
    const auto cells = split_tabs(line);
    if (cells.size() == 2) kv[cells[0]] = cells[1];
  }
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw DataError(std::string("corpus.tsv lacks ") + key);
    return it->second;
  };
  Corpus c;
  c.root = dir;
  c.spec.n_speakers = std::stoi(get("n_speakers"));
  c.spec.n_scripts = std::stoi(get("n_scripts"));
  c.spec.seed = std::stoull(get("seed"));
  c.spec.sample_rate = std::stoi(get("sample_rate"));
  c.spec.heldout_speakers = std::stoi(get("heldout_speakers"));
  c.spec.heldout_scripts = std::stoi(get("heldout_scripts"));
  c.spec.validate();
  c.speakers = make_speakers(c.spec.n_speakers, c.spec.seed, c.spec.sample_rate);
  c.scripts = make_scripts(c.spec.n_scripts, c.spec.seed);

  std::ifstream man(dir / "manifest.tsv");
  if (!man) throw DataError("missing manifest " + (dir / "manifest.tsv").string());
  std::map<std::string, std::pair<int, int>> ids;
  for (int s = 0; s < c.spec.n_speakers; ++s)
    for (int k = 0; k < c.spec.n_scripts; ++k) ids[utterance_id(s, k)] = {s, k};
  while (std::getline(man, line)) {
    if (line.empty()) continue;
    const auto cells = split_tabs(line);
    if (cells.size() != 3) throw DataError("malformed manifest line: " + line);
    auto it = ids.find(cells[0]);
    if (it == ids.end()) throw DataError("manifest names unknown utterance " + cells[0]);
    if (std::stoi(cells[1]) != it->second.first) throw DataError("manifest speaker mismatch for " + cells[0]);
    c.utterances.push_back({cells[0], it->second.first, it->second.second, cells[2]});
  }
  if (c.utterances.size() != ids.size()) throw DataError("manifest does not list every utterance");
  return c;
}

MelSpectrogram oracle_target(const Corpus& corpus, int script, int tgt_speaker, const FeatureConfig& cfg) {
  if (script < 0 || script >= corpus.spec.n_scripts) throw DataError("unknown script " + std::to_string(script));
  if (tgt_speaker < 0 || tgt_speaker >= corpus.spec.n_speakers) {
    throw DataError("unknown speaker " + std::to_string(tgt_speaker));
  }
  const Waveform w = load_wav(corpus.wav_path(corpus.find(tgt_speaker, script)), cfg.sample_rate);
  return mel_spectrogram(w.samples, cfg);
}

double speaker_separability(const Corpus& corpus, const std::vector<MelSpectrogram>& mels, const FeatureConfig& cfg) {
  if (mels.size() != corpus.utterances.size()) throw ShapeError("need one mel per utterance");
  std::vector<int> bins;
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double lo = hz_to_mel(cfg.fmin), hi = hz_to_mel(cfg.fmax);
    const double centre = mel_to_hz(lo + (hi - lo) * (m + 1.0) / (cfg.n_mels + 1));
    if (centre >= 200.0 && centre <= 3500.0) bins.push_back(m);
  }
  const int S = corpus.spec.n_speakers;
  const std::size_t D = bins.size();
  std::vector<std::vector<double>> stat(mels.size(), std::vector<double>(D, 0.0));
  std::vector<std::vector<double>> sum(S, std::vector<double>(D, 0.0));
  std::vector<int> count(S, 0);
  for (std::size_t u = 0; u < mels.size(); ++u) {
    for (std::size_t d = 0; d < D; ++d) {
      double acc = 0.0;
      for (int f = 0; f < mels[u].frames; ++f) acc += mels[u].at(f, bins[d]);
      stat[u][d] = acc / mels[u].frames;
    }
    const int s = corpus.utterances[u].speaker;
    for (std::size_t d = 0; d < D; ++d) sum[s][d] += stat[u][d];
    ++count[s];
  }
  auto dist = [&](const std::vector<double>& x, int s, const std::vector<double>* exclude) {
    const int n = count[s] - (exclude ? 1 : 0);
    double acc = 0.0;
    for (std::size_t d = 0; d < D; ++d) {
      const double c = (sum[s][d] - (exclude ? (*exclude)[d] : 0.0)) / n;
      acc += (x[d] - c) * (x[d] - c);
    }
    return acc;
  };
  long ok = 0, total = 0;
  for (std::size_t u = 0; u < mels.size(); ++u) {
    const int own = corpus.utterances[u].speaker;
    if (count[own] < 2) continue;
    const double d_own = dist(stat[u], own, &stat[u]);
    for (int s = 0; s < S; ++s) {
      if (s == own || count[s] == 0) continue;
      ++total;
      if (d_own < dist(stat[u], s, nullptr)) ++ok;
    }
  }
  if (total == 0) throw DataError("separability needs at least two utterances per speaker");
  return static_cast<double>(ok) / total;
}

}  // namespace vcd
