// SPDX-License-Identifier: Apache-2.0
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "test_util.hpp"
#include "vcd/checkpoint.hpp"
#include "vcd/config.hpp"
#include "vcd/corpus.hpp"
#include "vcd/dataset.hpp"

namespace vcd {
namespace {

namespace fs = std::filesystem;
using test::random_tensor;

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// ---------------------------------------------------------------- key/value config

TEST(KeyValues, ParsesCommentsAndTypes) {
  const auto kv = KeyValues::parse("# header\n a = 3 \n\nb=0.25 # trailing\nflag = true\nlist = 1,2,3\nname = toy\n");
  EXPECT_EQ(kv.get_int("a"), 3);
  EXPECT_EQ(kv.get_double("b"), 0.25);
  EXPECT_TRUE(kv.get_bool("flag"));
  EXPECT_EQ(kv.get_ints("list"), (std::vector<int>{1, 2, 3}));
  EXPECT_EQ(kv.get_string("name"), "toy");
}

TEST(KeyValues, RejectsMalformedInput) {
  EXPECT_THROW(KeyValues::parse("novalue\n"), ConfigError);
  EXPECT_THROW(KeyValues::parse("=3\n"), ConfigError);
  EXPECT_THROW(KeyValues::parse("a=1\na=2\n"), ConfigError);
  const auto kv = KeyValues::parse("a = x\nb = maybe\n");
  EXPECT_THROW(kv.get_int("a"), ConfigError);
  EXPECT_THROW(kv.get_bool("b"), ConfigError);
  EXPECT_THROW(kv.get_int("missing"), ConfigError);
}

TEST(KeyValues, OverrideRejectsUnknownKeys) {
  auto base = KeyValues::parse("a = 1\nb = 2\n");
  base.override_with(KeyValues::parse("b = 5\n"));
  EXPECT_EQ(base.get_int("b"), 5);
  EXPECT_THROW(base.override_with(KeyValues::parse("c = 1\n")), ConfigError);
}

TEST(KeyValues, DoublesRoundTripExactly) {
  for (double v : {0.1, 1.0 / 3.0, 2.428766907034852e-09, -7.5e300, 0.0}) {
    KeyValues kv;
    kv.set("x", v);
    EXPECT_EQ(KeyValues::parse(kv.dump()).get_double("x"), v);
  }
  EXPECT_EQ(format_double(0.1), "0.1");
}

TEST(KeyValues, SubsetAndAbsorb) {
  const auto kv = KeyValues::parse("m.a = 1\nm.b = 2\nn.a = 3\n");
  const auto m = kv.subset("m.");
  EXPECT_EQ(m.entries().size(), 2u);
  KeyValues out;
  out.absorb(m, "z.");
  EXPECT_EQ(out.get_int("z.b"), 2);
}

// ---------------------------------------------------------------- checkpoint container

TEST(Checkpoint, RoundTripPreservesEverything) {
  TempDir dir("vcd_test_ckpt");
  Checkpoint ck;
  ck.meta.set("role", "teacher");
  ck.tensors["w"] = random_tensor({3, 4, 5}, 1);
  ck.tensors["b"] = random_tensor({7}, 2);
  ck.put_schedule(build_cosine_schedule(1000));
  ck.put_stats(NormStats{{1.0, 2.0}, {0.5, 0.25}});
  ck.save(dir.path / "a.ckpt");
  const Checkpoint r = Checkpoint::load(dir.path / "a.ckpt");
  EXPECT_EQ(r.meta.get_string("role"), "teacher");
  EXPECT_EQ(r.tensor("w").shape(), ck.tensors["w"].shape());
  EXPECT_EQ(r.tensor("w").values().size(), ck.tensors["w"].values().size());
  for (std::size_t i = 0; i < r.tensor("w").values().size(); ++i) ASSERT_EQ(r.tensor("w").values()[i], ck.tensors["w"].values()[i]);
  const NoiseSchedule a = build_cosine_schedule(1000), b = r.schedule();
  EXPECT_EQ(a.alpha_bar, b.alpha_bar);
  EXPECT_EQ(r.stats().std, (std::vector<double>{0.5, 0.25}));
  EXPECT_THROW(r.tensor("missing"), DataError);
}

TEST(Checkpoint, DetectsCorruptionAndTruncation) {
  TempDir dir("vcd_test_ckpt_bad");
  Checkpoint ck;
  ck.meta.set("k", 1);
  ck.tensors["w"] = random_tensor({16}, 3);
  ck.save(dir.path / "a.ckpt");
  std::string bytes;
  {
    std::ifstream in(dir.path / "a.ckpt", std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  std::string flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  std::ofstream(dir.path / "flip.ckpt", std::ios::binary) << flipped;
  std::ofstream(dir.path / "short.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() - 5);
  std::ofstream(dir.path / "junk.ckpt", std::ios::binary) << "hello world, not a checkpoint";
  EXPECT_THROW(Checkpoint::load(dir.path / "flip.ckpt"), DataError);
  EXPECT_THROW(Checkpoint::load(dir.path / "short.ckpt"), DataError);
  EXPECT_THROW(Checkpoint::load(dir.path / "junk.ckpt"), DataError);
  EXPECT_THROW(Checkpoint::load(dir.path / "absent.ckpt"), DataError);
}

TEST(Checkpoint, ParamsRequireStoredShapes) {
  nn::ParamSet a, b;
  a.add("w", random_tensor({2, 3}, 1));
  b.add("w", random_tensor({3, 2}, 1));
  Checkpoint ck;
  ck.put_params("m.", a);
  EXPECT_THROW(ck.get_params("m.", b), DataError);
  nn::ParamSet c;
  c.add("w", Tensor({2, 3}));
  ck.get_params("m.", c);
  EXPECT_EQ(c.hash(), a.hash());
}

TEST(MelFile, RoundTripAtSinglePrecision) {
  TempDir dir("vcd_test_melfile");
  const MelSpectrogram m = tensor_to_mel(random_tensor({1, 5, 9}, 4));
  write_mel_file(dir.path / "x.mel", m);
  const MelSpectrogram r = read_mel_file(dir.path / "x.mel");
  ASSERT_EQ(r.frames, 9);
  ASSERT_EQ(r.bins, 5);
  for (std::size_t i = 0; i < m.data.size(); ++i) ASSERT_EQ(r.data[i], static_cast<double>(static_cast<float>(m.data[i])));
  std::ofstream(dir.path / "bad.mel", std::ios::binary) << "VCDMEL01xx";
  EXPECT_THROW(read_mel_file(dir.path / "bad.mel"), DataError);
}

// ---------------------------------------------------------------- synthetic corpus

TEST(Corpus, SpeakerParametersStayInRange) {
  const auto speakers = make_speakers(10, 7);
  ASSERT_EQ(speakers.size(), 10u);
  for (const auto& s : speakers) {
    EXPECT_GE(s.f0_min, 90.0);
    EXPECT_LE(s.f0_max, 300.0);
    EXPECT_GE(s.formants[0], 300.0);
    EXPECT_LE(s.formants[0], 900.0);
    EXPECT_LT(s.formants[0], s.formants[1]);
    EXPECT_LT(s.formants[1], s.formants[2]);
    EXPECT_GE(s.breathiness, 0.0);
    EXPECT_LT(s.breathiness, 1.0);
  }
  EXPECT_EQ(make_speakers(10, 7)[3].f0_base, speakers[3].f0_base);
  EXPECT_NE(make_speakers(10, 8)[3].f0_base, speakers[3].f0_base);
}

TEST(Corpus, RenderingIsDeterministicAndBounded) {
  const auto spk = make_speakers(2, 1);
  const auto scripts = make_scripts(2, 1);
  const Waveform a = render_utterance(spk[0], scripts[0], 16000, 5);
  const Waveform b = render_utterance(spk[0], scripts[0], 16000, 5);
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_NEAR(static_cast<double>(a.samples.size()) / 16000.0, scripts[0].duration(), 1.0 / 16000.0 + 1e-9);
  for (double v : a.samples) ASSERT_LE(std::abs(v), 1.0);
  const Waveform other = render_utterance(spk[1], scripts[0], 16000, 5);
  EXPECT_EQ(other.samples.size(), a.samples.size());
  EXPECT_NE(other.samples, a.samples);
}

TEST(Corpus, SegmentLookupAndLabels) {
  const auto script = make_scripts(1, 3).front();
  ASSERT_FALSE(script.segments.empty());
  EXPECT_EQ(script.segment_at(0.0), 0);
  EXPECT_EQ(script.segment_at(1e9), static_cast<int>(script.segments.size()) - 1);
  const auto labels = frame_labels(script, 40, 256, 22050);
  ASSERT_EQ(labels.size(), 40u);
  for (int l : labels) {
    EXPECT_GE(l, 0);
    EXPECT_LT(l, kVowelCount);
  }
  EXPECT_EQ(labels.front(), script.segments.front().vowel);
}

TEST(Corpus, SpecValidation) {
  CorpusSpec s;
  EXPECT_NO_THROW(s.validate());
  s.n_speakers = 1;
  EXPECT_THROW(s.validate(), ConfigError);
  s = CorpusSpec{};
  s.heldout_scripts = s.n_scripts;
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(Corpus, GenerateLoadAndFeatureSplit) {
  TempDir dir("vcd_test_corpus");
  CorpusSpec spec;
  spec.n_speakers = 3;
  spec.n_scripts = 3;
  spec.heldout_speakers = 1;
  spec.heldout_scripts = 1;
  spec.sample_rate = 16000;
  const Corpus c = generate_corpus(spec, dir.path / "corpus");
  ASSERT_EQ(c.utterances.size(), 9u);
  for (const char* f : {"manifest.tsv", "speakers.tsv", "scripts.tsv", "oracle_pairs.tsv", "corpus.tsv"})
    EXPECT_TRUE(fs::exists(dir.path / "corpus" / f)) << f;
  const Corpus r = load_corpus(dir.path / "corpus");
  EXPECT_EQ(r.utterances.size(), 9u);
  EXPECT_EQ(r.speakers[2].f0_base, c.speakers[2].f0_base);
  EXPECT_TRUE(r.train_speaker(1));
  EXPECT_FALSE(r.train_speaker(2));
  EXPECT_FALSE(r.train_script(2));

  FeatureConfig fc;
  fc.sample_rate = 16000;
  fc.fft_size = 512;
  fc.win = 512;
  fc.hop = 128;
  fc.n_mels = 20;
  fc.fmax = 8000.0;
  const Dataset ds = build_dataset(r, fc);
  ASSERT_EQ(ds.items.size(), 9u);
  EXPECT_EQ(ds.train_indices().size(), 4u);
  const auto oracle = oracle_target(r, 1, 2, fc);
  // The oracle is the target speaker's own rendering, normalized stats aside.
  const auto raw = denormalize(ds.find(2, 1).mel, ds.stats);
  ASSERT_EQ(oracle.frames, raw.frames);
  for (std::size_t i = 0; i < raw.data.size(); ++i) ASSERT_NEAR(oracle.data[i], raw.data[i], 1e-9);
  EXPECT_FALSE(ds.find(0, 0).labels.empty());
}

TEST(Dataset, CropOrPadRepeatsLastFrame) {
  const MelSpectrogram m = tensor_to_mel(random_tensor({1, 3, 4}, 1));
  const MelSpectrogram c = crop_or_pad(m, 2, 5);
  ASSERT_EQ(c.frames, 5);
  for (int f = 0; f < 5; ++f)
    for (int b = 0; b < 3; ++b) ASSERT_EQ(c.at(f, b), m.at(std::min(2 + f, 3), b));
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    const int s = random_crop_start(10, 4, rng);
    ASSERT_GE(s, 0);
    ASSERT_LE(s, 6);
  }
  EXPECT_EQ(random_crop_start(3, 4, rng), 0);
}

}  // namespace
}  // namespace vcd
