// SPDX-License-Identifier: Apache-2.0
#include "vcd/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <map>
#include <optional>
#include <sstream>

#include "vcd/checkpoint.hpp"
#include "vcd/corpus.hpp"
#include "vcd/dataset.hpp"
#include "vcd/error.hpp"

namespace vcd {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- configuration

KeyValues default_run_config(const std::string& preset) {
  const NetworkPreset net = network_preset(preset);
  KeyValues kv;
  kv.set("seed", std::uint64_t{1});
  kv.set("model.preset", preset);
  net.predictor.to_kv(kv, "model.predictor.");
  net.speaker.to_kv(kv, "model.speaker.");
  net.content.to_kv(kv, "model.content.");
  net.vocoder.to_kv(kv, "model.vocoder.");
  net.discriminator.to_kv(kv, "model.discriminator.");

  const CorpusSpec corpus;
  kv.set("corpus.n_speakers", corpus.n_speakers);
  kv.set("corpus.n_scripts", corpus.n_scripts);
  kv.set("corpus.heldout_speakers", corpus.heldout_speakers);
  kv.set("corpus.heldout_scripts", corpus.heldout_scripts);

  FeatureConfig f;
  f.n_mels = net.predictor.n_mels;
  kv.set("features.sample_rate", f.sample_rate);
  kv.set("features.fft_size", f.fft_size);
  kv.set("features.hop", f.hop);
  kv.set("features.win", f.win);
  kv.set("features.n_mels", f.n_mels);
  kv.set("features.fmin", f.fmin);
  kv.set("features.fmax", f.fmax);
  kv.set("features.log_floor", f.log_floor);

  kv.set("schedule.T", 1000);
  kv.set("schedule.offset", 0.008);

  const EncoderTrainConfig enc;
  kv.set("encoders.epochs", 15);
  kv.set("encoders.batch", enc.batch);
  kv.set("encoders.lr", enc.lr);
  kv.set("encoders.crop", enc.crop);
  kv.set("encoders.cosine_scale", enc.cosine_scale);

  const VocoderTrainConfig voc;
  kv.set("vocoder.steps", voc.steps);
  kv.set("vocoder.batch", voc.batch);
  kv.set("vocoder.lr", voc.lr);
  kv.set("vocoder.crop_frames", voc.crop_frames);
  kv.set("vocoder.fft_sizes", voc.fft_sizes);
  kv.set("vocoder.eval_every", voc.eval_every);

  TeacherTrainConfig teacher;
  teacher.batch = 16;
  teacher.lr = 1e-3;
  teacher.crops_per_utterance = 8;
  kv.set("teacher.epochs", teacher.epochs);
  kv.set("teacher.batch", teacher.batch);
  kv.set("teacher.lr", teacher.lr);
  kv.set("teacher.beta1", teacher.beta1);
  kv.set("teacher.beta2", teacher.beta2);
  kv.set("teacher.crop", teacher.crop);
  kv.set("teacher.crops_per_utterance", teacher.crops_per_utterance);

  const DistillConfig d;
  kv.set("distill.lambda_fm", d.lambda_fm);
  kv.set("distill.lambda_dist", d.lambda_dist);
  kv.set("distill.s_k", d.s_k);
  kv.set("distill.batch", d.batch);
  kv.set("distill.lr", d.lr);
  kv.set("distill.beta1", d.beta1);
  kv.set("distill.beta2", d.beta2);
  kv.set("distill.steps", d.steps);
  kv.set("distill.crop", d.crop);
  kv.set("distill.target", to_string(d.target));
  kv.set("distill.collapse_threshold", d.collapse_threshold);
  kv.set("distill.collapse_window", d.collapse_window);
  kv.set("distill.log_every", 50);

  kv.set("convert.s_first", 50);
  kv.set("convert.s_last", 950);

  kv.set("eval.reference_script", 0);
  kv.set("eval.max_pairs", 0);
  kv.set("eval.sweep_pairs", 40);
  kv.set("eval.timing_pairs", 10);
  return kv;
}

KeyValues resolve_run_config(const KeyValues& overrides) {
  const std::string preset = overrides.has("model.preset") ? overrides.get_string("model.preset") : "toy";
  KeyValues kv = default_run_config(preset);
  kv.override_with(overrides);
  // Validate every section eagerly so a bad value fails before any work starts.
  corpus_spec(kv).validate();
  feature_config(kv).validate();
  const NetworkPreset net = network_config(kv);
  net.predictor.validate();
  if (net.predictor.n_mels != kv.get_int("features.n_mels")) {
    throw ConfigError("model.predictor.n_mels must equal features.n_mels");
  }
  if (net.vocoder.hop() != kv.get_int("features.hop")) {
    throw ConfigError("the vocoder upsampling product " + std::to_string(net.vocoder.hop()) +
                      " must equal features.hop " + kv.get_string("features.hop"));
  }
  const NoiseSchedule sched = run_schedule(kv);
  teacher_train_config(kv).validate();
  distill_config(kv).validate(sched);
  parse_teacher_target(kv.get_string("distill.target"));
  const int s_first = kv.get_int("convert.s_first"), s_last = kv.get_int("convert.s_last");
  if (s_first < 1 || s_last > sched.T || s_first > s_last) throw ConfigError("convert.s_first/s_last must satisfy 1 <= s_first <= s_last <= T");
  if (kv.get_int("eval.sweep_pairs") < kMinTrials) throw ConfigError("eval.sweep_pairs must be at least " + std::to_string(kMinTrials));
  return kv;
}

CorpusSpec corpus_spec(const KeyValues& cfg) {
  CorpusSpec s;
  s.n_speakers = cfg.get_int("corpus.n_speakers");
  s.n_scripts = cfg.get_int("corpus.n_scripts");
  s.heldout_speakers = cfg.get_int("corpus.heldout_speakers");
  s.heldout_scripts = cfg.get_int("corpus.heldout_scripts");
  s.sample_rate = cfg.get_int("features.sample_rate");
  s.seed = derive_seed(cfg.get_u64("seed"), "corpus");
  return s;
}

FeatureConfig feature_config(const KeyValues& cfg) {
  FeatureConfig f;
  f.sample_rate = cfg.get_int("features.sample_rate");
  f.fft_size = cfg.get_int("features.fft_size");
  f.hop = cfg.get_int("features.hop");
  f.win = cfg.get_int("features.win");
  f.n_mels = cfg.get_int("features.n_mels");
  f.fmin = cfg.get_double("features.fmin");
  f.fmax = cfg.get_double("features.fmax");
  f.log_floor = cfg.get_double("features.log_floor");
  return f;
}

NoiseSchedule run_schedule(const KeyValues& cfg) {
  return build_cosine_schedule(cfg.get_int("schedule.T"), cfg.get_double("schedule.offset"));
}

NetworkPreset network_config(const KeyValues& cfg) {
  NetworkPreset p;
  p.name = cfg.get_string("model.preset");
  p.predictor = NoisePredictorConfig::from_kv(cfg, "model.predictor.");
  p.speaker = SpeakerEncoderConfig::from_kv(cfg, "model.speaker.");
  p.content = ContentEncoderConfig::from_kv(cfg, "model.content.");
  p.vocoder = VocoderConfig::from_kv(cfg, "model.vocoder.");
  p.discriminator = DiscriminatorConfig::from_kv(cfg, "model.discriminator.");
  return p;
}

EncoderTrainConfig encoder_train_config(const KeyValues& cfg) {
  EncoderTrainConfig c;
  c.epochs = cfg.get_int("encoders.epochs");
  c.batch = cfg.get_int("encoders.batch");
  c.lr = cfg.get_double("encoders.lr");
  c.crop = cfg.get_int("encoders.crop");
  c.cosine_scale = cfg.get_double("encoders.cosine_scale");
  if (c.epochs < 1 || c.batch < 1 || c.crop < 1 || !(c.lr > 0.0)) throw ConfigError("invalid encoders.* settings");
  return c;
}

VocoderTrainConfig vocoder_train_config(const KeyValues& cfg) {
  VocoderTrainConfig c;
  c.steps = cfg.get_int("vocoder.steps");
  c.batch = cfg.get_int("vocoder.batch");
  c.lr = cfg.get_double("vocoder.lr");
  c.crop_frames = cfg.get_int("vocoder.crop_frames");
  c.fft_sizes = cfg.get_ints("vocoder.fft_sizes");
  c.eval_every = cfg.get_int("vocoder.eval_every");
  if (c.steps < 1 || c.batch < 1 || c.crop_frames < 1 || c.eval_every < 1 || c.fft_sizes.empty() || !(c.lr > 0.0)) {
    throw ConfigError("invalid vocoder.* settings");
  }
  return c;
}

TeacherTrainConfig teacher_train_config(const KeyValues& cfg) {
  TeacherTrainConfig c;
  c.epochs = cfg.get_int("teacher.epochs");
  c.batch = cfg.get_int("teacher.batch");
  c.lr = cfg.get_double("teacher.lr");
  c.beta1 = cfg.get_double("teacher.beta1");
  c.beta2 = cfg.get_double("teacher.beta2");
  c.crop = cfg.get_int("teacher.crop");
  c.crops_per_utterance = cfg.get_int("teacher.crops_per_utterance");
  c.validate();
  return c;
}

DistillConfig distill_config(const KeyValues& cfg) {
  DistillConfig c;
  c.lambda_fm = cfg.get_double("distill.lambda_fm");
  c.lambda_dist = cfg.get_double("distill.lambda_dist");
  c.s_k = cfg.get_int("distill.s_k");
  c.batch = cfg.get_int("distill.batch");
  c.lr = cfg.get_double("distill.lr");
  c.beta1 = cfg.get_double("distill.beta1");
  c.beta2 = cfg.get_double("distill.beta2");
  c.steps = cfg.get_int("distill.steps");
  c.crop = cfg.get_int("distill.crop");
  c.target = parse_teacher_target(cfg.get_string("distill.target"));
  c.collapse_threshold = cfg.get_double("distill.collapse_threshold");
  c.collapse_window = cfg.get_int("distill.collapse_window");
  return c;
}

// ---------------------------------------------------------------- artifacts

ArtifactLock::ArtifactLock(const fs::path& path) : path_(path) {
  const int fd = ::open(path.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    if (errno == EEXIST) {
      throw DataError("artifact directory is locked by another run (remove " + path.string() + " if it is stale)");
    }
    throw DataError("cannot create lock " + path.string() + ": " + std::strerror(errno));
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] const auto written = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

ArtifactLock::~ArtifactLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

void require_artifact(const fs::path& path, const std::string& produced_by) {
  if (!fs::exists(path)) throw DataError("missing prerequisite " + path.string() + " (run '" + produced_by + "' first)");
}

namespace {

ArtifactLock make_lock(const Stage& st) {
  fs::create_directories(st.paths.root);
  return ArtifactLock(st.paths.lock());
}

}  // namespace

StageScope::StageScope(const Stage& stage, const std::string& name) : lock_(make_lock(stage)) {
  stage.cfg.save(stage.paths.resolved_config(name));
}

namespace {

void say(const Stage& st, const std::string& msg) {
  if (st.log) st.log(msg);
}

void put_network_meta(Checkpoint& ck, const std::string& preset) { ck.meta.set("model.preset", preset); }

template <typename Config>
Config config_from_meta(const Checkpoint& ck, const std::string& prefix) {
  return Config::from_kv(ck.meta, prefix);
}

Dataset load_features(const RunPaths& paths) {
  require_artifact(paths.features() / "index.tsv", "extract-features");
  return load_dataset(paths.features());
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

EncoderModels load_encoders(const fs::path& path) {
  require_artifact(path, "train-encoders");
  const Checkpoint ck = Checkpoint::load(path);
  EncoderModels m{SpeakerEncoder(config_from_meta<SpeakerEncoderConfig>(ck, "model.speaker."), 0),
                  ContentEncoder(config_from_meta<ContentEncoderConfig>(ck, "model.content."), 0),
                  SpeakerEncoder(config_from_meta<SpeakerEncoderConfig>(ck, "model.speaker."), 0)};
  ck.get_params("speaker.", m.speaker.params());
  ck.get_params("content.", m.content.params());
  ck.get_params("verifier.", m.verifier.params());
  m.speaker.params().set_trainable(false);
  m.content.params().set_trainable(false);
  m.verifier.params().set_trainable(false);
  return m;
}

Vocoder load_vocoder(const fs::path& path) {
  require_artifact(path, "train-vocoder");
  const Checkpoint ck = Checkpoint::load(path);
  Vocoder v(config_from_meta<VocoderConfig>(ck, "model.vocoder."), 0);
  ck.get_params("vocoder.", v.params());
  v.params().set_trainable(false);
  return v;
}

NoisePredictor load_predictor(const fs::path& path) {
  require_artifact(path, path.filename() == "student.ckpt" ? "distill" : "train-teacher");
  const Checkpoint ck = Checkpoint::load(path);
  const NoiseSchedule sched = ck.schedule();
  NoisePredictor m(config_from_meta<NoisePredictorConfig>(ck, "model.predictor."), 0, &sched);
  ck.get_params("predictor.", m.params());
  return m;
}

void save_predictor(const fs::path& path, const NoisePredictor& model, const NoiseSchedule& sched, const NormStats& stats,
                    const std::string& role) {
  Checkpoint ck;
  ck.meta.set("role", role);
  model.config().to_kv(ck.meta, "model.predictor.");
  ck.put_params("predictor.", model.params());
  ck.put_schedule(sched);
  ck.put_stats(stats);
  ck.save(path);
}

// ---------------------------------------------------------------- training stages

void stage_gen_corpus(const Stage& st) {
  StageScope scope(st, "gen-corpus");
  const CorpusSpec spec = corpus_spec(st.cfg);
  const auto t0 = std::chrono::steady_clock::now();
  const Corpus corpus = generate_corpus(spec, st.paths.corpus());
  std::ostringstream os;
  os << "rendered " << corpus.utterances.size() << " utterances (" << spec.n_speakers << " speakers x " << spec.n_scripts
     << " scripts) in " << format_double(std::round(seconds_since(t0) * 10.0) / 10.0) << " s";
  say(st, os.str());
}

void stage_extract_features(const Stage& st) {
  require_artifact(st.paths.corpus() / "manifest.tsv", "gen-corpus");
  StageScope scope(st, "extract-features");
  const Corpus corpus = load_corpus(st.paths.corpus());
  const Dataset ds = build_dataset(corpus, feature_config(st.cfg));
  save_dataset(ds, st.paths.features());
  say(st, "extracted " + std::to_string(ds.items.size()) + " log-mel spectrograms");
}

void stage_train_encoders(const Stage& st) {
  const Dataset ds = load_features(st.paths);
  StageScope scope(st, "train-encoders");
  const NetworkPreset net = network_config(st.cfg);
  const EncoderTrainConfig tc = encoder_train_config(st.cfg);
  const std::uint64_t seed = st.seed();
  const auto train = ds.train_indices();
  const int ref_script = st.cfg.get_int("eval.reference_script");
  if (!ds.train_script(ref_script)) throw ConfigError("eval.reference_script must be a training script");

  std::ostringstream log;
  log << "network,epoch,mean_loss\n";
  SpeakerEncoder speaker(net.speaker, derive_seed(seed, "speaker.init"));
  for (const auto& e : train_speaker_encoder(speaker, ds, train, tc, derive_seed(seed, "speaker.train")))
    log << "speaker," << e.epoch << ',' << format_double(e.mean_loss) << '\n';
  say(st, "speaker encoder trained");

  ContentEncoder content(net.content, derive_seed(seed, "content.init"));
  for (const auto& e : train_content_encoder(content, ds, train, tc, derive_seed(seed, "content.train")))
    log << "content," << e.epoch << ',' << format_double(e.mean_loss) << '\n';
  const auto heldout = ds.select([&](const Example& e) { return ds.train_speaker(e.speaker) && !ds.train_script(e.script); });
  const double acc = net.content.n_classes > 0 ? content_accuracy(content, ds, heldout) : 0.0;
  say(st, "content encoder trained, held-out frame accuracy " + format_double(std::round(acc * 1000.0) / 1000.0));

  // The verifier sees every speaker so that converted speech can be scored
  // against any target; it never sees the held-out evaluation scripts.
  const auto verifier_items = ds.select([&](const Example& e) { return ds.train_script(e.script); });
  SpeakerEncoder verifier(net.speaker, derive_seed(seed, "verifier.init"));
  for (const auto& e : train_speaker_encoder(verifier, ds, verifier_items, tc, derive_seed(seed, "verifier.train")))
    log << "verifier," << e.epoch << ',' << format_double(e.mean_loss) << '\n';
  say(st, "verifier trained");

  Checkpoint ck;
  put_network_meta(ck, net.name);
  net.speaker.to_kv(ck.meta, "model.speaker.");
  net.content.to_kv(ck.meta, "model.content.");
  ck.meta.set("content.heldout_accuracy", acc);
  ck.put_params("speaker.", speaker.params());
  ck.put_params("content.", content.params());
  ck.put_params("verifier.", verifier.params());
  ck.put_stats(ds.stats);
  ck.save(st.paths.encoders());
  write_text_file(st.paths.root / "encoders_log.csv", log.str());
}

VocoderTrainResult stage_train_vocoder(const Stage& st) {
  Dataset ds = load_features(st.paths);
  require_artifact(st.paths.corpus() / "manifest.tsv", "gen-corpus");
  StageScope scope(st, "train-vocoder");
  attach_audio(ds, load_corpus(st.paths.corpus()));
  const NetworkPreset net = network_config(st.cfg);
  const VocoderTrainConfig vc = vocoder_train_config(st.cfg);
  Vocoder voc(net.vocoder, derive_seed(st.seed(), "vocoder.init"));
  const auto train = ds.train_indices();
  const auto val = ds.select([&](const Example& e) { return ds.train_speaker(e.speaker) && !ds.train_script(e.script); });
  const VocoderTrainResult res = train_vocoder(voc, ds, train, val, vc, derive_seed(st.seed(), "vocoder.train"));
  std::ostringstream log;
  log << "step,val_loss\n";
  for (const auto& [step, loss] : res.curve) log << step << ',' << format_double(loss) << '\n';
  write_text_file(st.paths.root / "vocoder_log.csv", log.str());

  Checkpoint ck;
  put_network_meta(ck, net.name);
  net.vocoder.to_kv(ck.meta, "model.vocoder.");
  ck.put_params("vocoder.", voc.params());
  ck.put_stats(ds.stats);
  ck.save(st.paths.vocoder());
  say(st, "vocoder validation loss " + format_double(res.initial_val_loss) + " -> " + format_double(res.final_val_loss));
  return res;
}

std::vector<TeacherLogRow> stage_train_teacher(const Stage& st) {
  const Dataset ds = load_features(st.paths);
  const EncoderModels enc = load_encoders(st.paths.encoders());
  StageScope scope(st, "train-teacher");
  const NetworkPreset net = network_config(st.cfg);
  const NoiseSchedule sched = run_schedule(st.cfg);
  const TeacherTrainConfig tc = teacher_train_config(st.cfg);
  const Conditioning cond = compute_conditioning(ds, enc.speaker, enc.content);
  NoisePredictor model(net.predictor, derive_seed(st.seed(), "teacher.init"), &sched);
  TeacherTrainHooks hooks;
  hooks.on_epoch = [&](const TeacherLogRow& r) {
    say(st, "teacher epoch " + std::to_string(r.epoch) + " loss " + format_double(std::round(r.mean_loss * 1e4) / 1e4));
  };
  const auto rows = train_teacher(model, ds, cond, ds.train_indices(), sched, tc, derive_seed(st.seed(), "teacher.train"), hooks);
  std::ostringstream log;
  log << "epoch,mean_loss,wall_time\n";
  for (const auto& r : rows) log << r.epoch << ',' << format_double(r.mean_loss) << ',' << format_double(r.wall_time) << '\n';
  write_text_file(st.paths.root / "teacher_log.csv", log.str());
  save_predictor(st.paths.teacher(), model, sched, ds.stats, "teacher");
  return rows;
}

DistillResult stage_distill(const Stage& st) {
  const Dataset ds = load_features(st.paths);
  const EncoderModels enc = load_encoders(st.paths.encoders());
  NoisePredictor teacher = load_predictor(st.paths.teacher());
  const Vocoder voc = load_vocoder(st.paths.vocoder());
  StageScope scope(st, "distill");
  const NetworkPreset net = network_config(st.cfg);
  const NoiseSchedule sched = run_schedule(st.cfg);
  const DistillConfig dc = distill_config(st.cfg);
  teacher.params().set_trainable(false);
  NoisePredictor student = load_predictor(st.paths.teacher());
  Discriminator disc(net.discriminator, derive_seed(st.seed(), "discriminator.init"));
  const Conditioning cond = compute_conditioning(ds, enc.speaker, enc.content);
  const int log_every = std::max(1, st.cfg.get_int("distill.log_every"));
  const auto res = distill(student, teacher, voc, disc, ds, cond, ds.train_indices(), sched, dc,
                           derive_seed(st.seed(), "distill.train"), [&](const DistillLogRow& r) {
                             if (r.step % log_every == 0) {
                               std::ostringstream os;
                               os.precision(4);
                               os << "distill step " << r.step << " adv_g " << r.adv_g << " adv_d " << r.adv_d << " fm "
                                  << r.fm << " dist " << r.dist << " total " << r.total_g;
                               say(st, os.str());
                             }
                           });
  if (res.collapse_warned) say(st, "warning: discriminator loss stayed below the collapse threshold");
  std::ostringstream log;
  log << "step,adv_g,adv_d,fm,dist,total_g\n";
  for (const auto& r : res.log) {
    log << r.step << ',' << format_double(r.adv_g) << ',' << format_double(r.adv_d) << ',' << format_double(r.fm) << ','
        << format_double(r.dist) << ',' << format_double(r.total_g) << '\n';
  }
  write_text_file(st.paths.root / "distill_log.csv", log.str());
  save_predictor(st.paths.student(), student, sched, ds.stats, "student");
  Checkpoint dk;
  put_network_meta(dk, net.name);
  net.discriminator.to_kv(dk.meta, "model.discriminator.");
  dk.put_params("discriminator.", disc.params());
  dk.save(st.paths.root / "discriminator.ckpt");
  return res;
}

// ---------------------------------------------------------------- conversion

namespace {

MelSpectrogram normalized_input(const fs::path& path, const FeatureConfig& f, const NormStats& stats) {
  if (!fs::exists(path)) throw DataError("input not found: " + path.string());
  if (path.extension() == ".mel") {
    const MelSpectrogram mel = read_mel_file(path);
    if (mel.bins != f.n_mels) throw ShapeError(path.string() + " has " + std::to_string(mel.bins) + " bins, expected " + std::to_string(f.n_mels));
    return normalize(mel, stats);
  }
  const Waveform w = load_wav(path, f.sample_rate);
  return normalize(mel_spectrogram(w.samples, f), stats);
}

std::vector<double> synthesize(const Vocoder& voc, const MelSpectrogram& normalized) {
  ad::NoGradGuard guard;
  const Tensor y = voc.forward(ad::constant(mel_to_tensor(normalized))).value();
  return {y.values().begin(), y.values().end()};
}

}  // namespace

ConversionResult stage_convert(const Stage& st, const ConvertArgs& args) {
  const Dataset ds = load_features(st.paths);
  const EncoderModels enc = load_encoders(st.paths.encoders());
  if (args.model != "student" && args.model != "teacher") throw ConfigError("--model must be student or teacher");
  const NoisePredictor model = load_predictor(args.model == "student" ? st.paths.student() : st.paths.teacher());
  if (args.out_mel.empty()) throw ConfigError("an output mel path is required");
  std::optional<Vocoder> voc;
  if (!args.out_wav.empty()) voc.emplace(load_vocoder(st.paths.vocoder()));
  StageScope scope(st, "convert");
  const NoiseSchedule sched = run_schedule(st.cfg);

  ConversionRequest req;
  req.source = normalized_input(args.source, ds.features, ds.stats);
  const MelSpectrogram target = normalized_input(args.target, ds.features, ds.stats);
  req.s_tgt = speaker_embedding(enc.speaker, target);
  req.p_src = content_embedding(enc.content, req.source);
  req.K = args.K;
  req.s_first = args.s_first;
  req.s_last = args.s_last;
  req.init = args.init;
  req.seed = derive_seed(st.seed(), "convert");
  const Predictor predictor(model);
  const ConversionResult res = convert_multistep(req, predictor, sched);
  if (args.out_mel.has_parent_path()) fs::create_directories(args.out_mel.parent_path());
  write_mel_file(args.out_mel, denormalize(res.mel, ds.stats));
  if (voc) {
    if (args.out_wav.has_parent_path()) fs::create_directories(args.out_wav.parent_path());
    write_wav(args.out_wav, Waveform{ds.features.sample_rate, synthesize(*voc, res.mel)});
  }
  say(st, "converted " + std::to_string(req.source.frames) + " frames with " + std::to_string(res.predictor_calls) +
              " predictor call(s)");
  return res;
}

// ---------------------------------------------------------------- evaluation

namespace {

struct EvalPair {
  std::size_t source = 0;  // dataset index
  int target = 0;
};

// Held-out scripts of every speaker, converted to every other speaker.
std::vector<EvalPair> eval_pairs(const Dataset& ds) {
  std::vector<EvalPair> pairs;
  for (int script = 0; script < ds.n_scripts; ++script) {
    if (ds.train_script(script)) continue;
    for (int src = 0; src < ds.n_speakers; ++src) {
      const auto idx = ds.select([&](const Example& e) { return e.speaker == src && e.script == script; });
      if (idx.size() != 1) throw DataError("expected one utterance for " + utterance_id(src, script));
      for (int tgt = 0; tgt < ds.n_speakers; ++tgt)
        if (tgt != src) pairs.push_back({idx[0], tgt});
    }
  }
  return pairs;
}

std::vector<EvalPair> spread(const std::vector<EvalPair>& pairs, int n) {
  if (n <= 0 || n >= static_cast<int>(pairs.size())) return pairs;
  std::vector<EvalPair> out;
  for (int i = 0; i < n; ++i) out.push_back(pairs[static_cast<std::size_t>(i) * pairs.size() / n]);
  return out;
}

// Verifier scores against one reference utterance per speaker.
class Verifier {
 public:
  Verifier(const SpeakerEncoder& enc, const Dataset& ds, int ref_script) : enc_(enc) {
    for (int s = 0; s < ds.n_speakers; ++s) refs_.push_back(speaker_embedding(enc, ds.find(s, ref_script).mel));
    std::vector<double> genuine, impostor;
    for (const auto& e : ds.items) {
      if (!ds.train_script(e.script) || e.script == ref_script) continue;
      const Tensor emb = speaker_embedding(enc, e.mel);
      for (int s = 0; s < ds.n_speakers; ++s) (s == e.speaker ? genuine : impostor).push_back(score(emb, s));
    }
    calibration_ = calibrate_eer(genuine, impostor);
  }
  double score(const Tensor& emb, int speaker) const { return cosine(emb.values(), refs_.at(speaker).values()); }
  double score(const MelSpectrogram& mel, int speaker) const { return score(speaker_embedding(enc_, mel), speaker); }
  const EerCalibration& calibration() const { return calibration_; }

 private:
  const SpeakerEncoder& enc_;
  std::vector<Tensor> refs_;
  EerCalibration calibration_;
};

struct EvalContext {
  const Dataset& ds;
  const EncoderModels& enc;
  const NoiseSchedule& sched;
  int ref_script;
  int s_first;
  int s_last;
  std::uint64_t seed;
  std::map<int, Tensor> s_cache;
  std::map<std::size_t, Tensor> p_cache;

  const Tensor& s_tgt(int speaker) {
    auto it = s_cache.find(speaker);
    if (it == s_cache.end()) it = s_cache.emplace(speaker, speaker_embedding(enc.speaker, ds.find(speaker, ref_script).mel)).first;
    return it->second;
  }
  const Tensor& p_src(std::size_t item) {
    auto it = p_cache.find(item);
    if (it == p_cache.end()) it = p_cache.emplace(item, content_embedding(enc.content, ds.items[item].mel)).first;
    return it->second;
  }
  ConversionRequest request(const EvalPair& pair, std::size_t pair_index) {
    ConversionRequest req;
    req.source = ds.items[pair.source].mel;
    req.s_tgt = s_tgt(pair.target);
    req.p_src = p_src(pair.source);
    req.s_first = s_first;
    req.s_last = s_last;
    req.seed = derive_seed(seed, "eval.pair", pair_index);
    return req;
  }
};

struct SystemSpec {
  std::string name;
  const Predictor* model = nullptr;
  int K = 1;
  InitMode init = InitMode::clean_source;
};

ConversionResult run_system(const SystemSpec& sys, ConversionRequest req, const NoiseSchedule& sched) {
  req.K = sys.K;
  req.init = sys.init;
  if (sys.K == 1 && sys.init == InitMode::diffused_source) return convert_fast(req, *sys.model, sched);
  return convert_multistep(req, *sys.model, sched);
}

double content_distance(const ContentEncoder& enc, const MelSpectrogram& converted, const Tensor& p_src) {
  const Tensor p = content_embedding(enc, converted);
  double d = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) d += std::abs(p[i] - p_src[i]);
  return d / static_cast<double>(p.size());
}

}  // namespace

void write_sweep_csv(const fs::path& path, const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "S_K,mode,quality_proxy,sva_proxy\n";
  for (const auto& r : rows)
    os << r.s_k << ',' << to_string(r.mode) << ',' << format_double(r.quality_proxy) << ',' << format_double(r.sva_proxy) << '\n';
  write_text_file(path, os.str());
}

std::vector<SweepRow> stage_sweep(const Stage& st, const std::vector<int>& grid, const fs::path& csv) {
  if (grid.empty()) throw ConfigError("empty S_K grid");
  const Dataset ds = load_features(st.paths);
  const EncoderModels enc = load_encoders(st.paths.encoders());
  const NoisePredictor teacher = load_predictor(st.paths.teacher());
  StageScope scope(st, "sweep-init");
  const NoiseSchedule sched = run_schedule(st.cfg);
  for (int s : grid)
    if (s < 1 || s > sched.T) throw ConfigError("S_K " + std::to_string(s) + " outside [1, " + std::to_string(sched.T) + "]");
  const int ref_script = st.cfg.get_int("eval.reference_script");
  const Verifier verifier(enc.verifier, ds, ref_script);
  EvalContext ctx{ds, enc, sched, ref_script, 1, 1, st.seed(), {}, {}};
  const auto pairs = spread(eval_pairs(ds), st.cfg.get_int("eval.sweep_pairs"));
  const Predictor predictor(teacher);

  std::vector<SweepRow> rows;
  for (InitMode mode : {InitMode::clean_source, InitMode::diffused_source}) {
    for (int s_k : grid) {
      // At S_K = T the source is fully destroyed, so both modes start from pure noise.
      const InitMode init = s_k == sched.T ? InitMode::pure_noise : mode;
      std::vector<double> scores;
      double lsd = 0.0;
      for (std::size_t i = 0; i < pairs.size(); ++i) {
        ConversionRequest req = ctx.request(pairs[i], i);
        req.K = 1;
        req.s_first = req.s_last = s_k;
        req.init = init;
        const ConversionResult res = convert_multistep(req, predictor, sched);
        const Example& src = ds.items[pairs[i].source];
        const MelSpectrogram oracle = ds.find(pairs[i].target, src.script).mel;
        lsd += mel_distance(denormalize(res.mel, ds.stats), denormalize(oracle, ds.stats)).lsd;
        scores.push_back(verifier.score(res.mel, pairs[i].target));
      }
      SweepRow row;
      row.s_k = s_k;
      row.mode = mode;
      row.quality_proxy = -lsd / static_cast<double>(pairs.size());
      row.sva_proxy = acceptance_rate(scores, verifier.calibration().threshold);
      rows.push_back(row);
      say(st, "S_K " + std::to_string(s_k) + " " + to_string(mode) + " quality " + format_double(row.quality_proxy) +
                  " sva " + format_double(row.sva_proxy));
    }
  }
  if (csv.has_parent_path()) fs::create_directories(csv.parent_path());
  write_sweep_csv(csv, rows);
  return rows;
}

EvalOutcome stage_evaluate(const Stage& st) {
  const Dataset ds = load_features(st.paths);
  const EncoderModels enc = load_encoders(st.paths.encoders());
  const NoisePredictor teacher = load_predictor(st.paths.teacher());
  const NoisePredictor student = load_predictor(st.paths.student());
  const Vocoder voc = load_vocoder(st.paths.vocoder());
  require_artifact(st.paths.corpus() / "manifest.tsv", "gen-corpus");
  const Corpus corpus = load_corpus(st.paths.corpus());
  StageScope scope(st, "evaluate");
  const NoiseSchedule sched = run_schedule(st.cfg);
  const int ref_script = st.cfg.get_int("eval.reference_script");
  const Verifier verifier(enc.verifier, ds, ref_script);
  EvalContext ctx{ds, enc, sched, ref_script, st.cfg.get_int("convert.s_first"), st.cfg.get_int("convert.s_last"),
                  st.seed(), {}, {}};
  const auto pairs = spread(eval_pairs(ds), st.cfg.get_int("eval.max_pairs"));
  const Predictor teacher_fn(teacher), student_fn(student);
  const std::vector<SystemSpec> systems{{"teacher-k30", &teacher_fn, 30, InitMode::clean_source},
                                        {"teacher-k6", &teacher_fn, 6, InitMode::clean_source},
                                        {"teacher-k1", &teacher_fn, 1, InitMode::diffused_source},
                                        {"student-k1", &student_fn, 1, InitMode::diffused_source}};

  EvalOutcome out;
  out.report.calibration = verifier.calibration();
  for (const auto& sys : systems) {
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const auto& pair = pairs[i];
      const Example& src = ds.items[pair.source];
      const ConversionResult res = run_system(sys, ctx.request(pair, i), sched);
      const Example& oracle = ds.find(pair.target, src.script);
      const MelDistance d = mel_distance(denormalize(res.mel, ds.stats), denormalize(oracle.mel, ds.stats));
      ConversionMetrics m;
      m.system = sys.name;
      m.source = src.id;
      m.target_speaker = "spk" + std::string(pair.target < 10 ? "0" : "") + std::to_string(pair.target);
      m.oracle = oracle.id;
      m.mel_l1 = d.l1;
      m.lsd = d.lsd;
      m.speaker_cosine = verifier.score(res.mel, pair.target);
      m.accepted = m.speaker_cosine > out.report.calibration.threshold;
      m.content_distance = content_distance(enc.content, res.mel, ctx.p_src(pair.source));
      m.predictor_calls = res.predictor_calls;
      out.report.rows.push_back(m);
    }
    say(st, "evaluated " + sys.name);
  }
  summarize(out.report);

  // Wall-clock accounting on a subset; kept out of the deterministic metrics.
  const auto timed = spread(pairs, st.cfg.get_int("eval.timing_pairs"));
  std::vector<StageTiming> timings;
  for (const auto& sys : systems) {
    StageTiming t;
    t.system = sys.name;
    for (std::size_t i = 0; i < timed.size(); ++i) {
      const Example& src = ds.items[timed[i].source];
      const auto t0 = std::chrono::steady_clock::now();
      const Waveform w = load_wav(corpus.wav_path(corpus.find(src.speaker, src.script)), ds.features.sample_rate);
      ConversionRequest req = ctx.request(timed[i], i);
      req.source = normalize(mel_spectrogram(w.samples, ds.features), ds.stats);
      req.p_src = content_embedding(enc.content, req.source);
      const auto t1 = std::chrono::steady_clock::now();
      const ConversionResult res = run_system(sys, req, sched);
      t.mel_seconds += seconds_since(t1);
      synthesize(voc, res.mel);
      t.total_seconds += seconds_since(t0);
      t.predictor_calls = res.predictor_calls;
    }
    timings.push_back(t);
  }
  out.cost = cost_report(std::move(timings), "teacher-k30", "student-k1");

  fs::create_directories(st.paths.eval());
  write_metrics_csv(st.paths.eval() / "metrics.csv", out.report);
  write_conversions_csv(st.paths.eval() / "conversions.csv", out.report);
  write_text_file(st.paths.eval() / "summary.txt", summary_table(out.report));
  write_timing_csv(st.paths.eval() / "timing.csv", out.cost);
  say(st, "\n" + summary_table(out.report));
  return out;
}

// ---------------------------------------------------------------- gradient checks

GradCheckReport run_loss_grad_checks(std::uint64_t seed, std::size_t max_per_param, double epsilon) {
  const NetworkPreset net = network_preset("tiny");
  const NoiseSchedule sched = build_cosine_schedule(1000);
  const int B = 2, F = 8, M = net.predictor.n_mels;
  Rng rng(derive_seed(seed, "gradcheck.data"));
  auto normal = [&](Shape shape) {
    Tensor t(std::move(shape));
    rng.fill_normal(t.values());
    return t;
  };
  const Tensor x0 = normal({B, M, F});
  const Tensor eps = normal({B, M, F});
  const Tensor eps_t = normal({B, M, F});
  const Var s = ad::constant(normal({B, net.predictor.speaker_dim}));
  const Var p = ad::constant(normal({B, net.predictor.content_dim, F}));
  const std::vector<int> t_train{120, 640};
  const std::vector<int> t_dist{230, 810};

  NoisePredictor student(net.predictor, derive_seed(seed, "gradcheck.student"), &sched);
  NoisePredictor teacher(net.predictor, derive_seed(seed, "gradcheck.teacher"), &sched);
  Vocoder voc(net.vocoder, derive_seed(seed, "gradcheck.vocoder"));
  Discriminator disc(net.discriminator, derive_seed(seed, "gradcheck.disc"));
  teacher.params().set_trainable(false);
  voc.params().set_trainable(false);
  const Predictor student_fn(student), teacher_fn(teacher);
  const int s_k = 950;
  auto x_theta = [&] { return student_generate(student_fn, x0, eps, s, p, s_k, sched); };
  const Tensor& real = x0;

  GradCheckReport report;
  const auto& sp = student.params().items();
  report.losses.push_back({"ddpm_loss", grad_check([&] { return ddpm_loss(student_fn, x0, t_train, eps, s, p, sched); }, sp,
                                                   epsilon, max_per_param)});
  disc.params().set_trainable(false);
  report.losses.push_back({"adv_loss_g", grad_check([&] { return adv_loss_g(x_theta(), disc, voc); }, sp, epsilon, max_per_param)});
  report.losses.push_back({"fm_loss", grad_check([&] { return fm_loss(real, x_theta(), disc, voc); }, sp, epsilon, max_per_param)});
  std::vector<double> w_dist;
  for (int t : t_dist) w_dist.push_back(distill_weight(t, sched));
  // The teacher estimate is a constant of the loss, so finite differences hold it
  // at its value for the unperturbed student.
  auto held = [&](const Predictor& teacher_like) {
    ad::NoGradGuard g;
    const Tensor xt = x_theta().value();
    return teacher_estimate(teacher_like, diffuse_batch(xt, t_dist, eps_t, sched), t_dist, s, p, sched,
                            TeacherTarget::x0_prediction);
  };
  auto surrogate = [&](const Tensor& x_phi) {
    return ad::mean(ad::scale_batch(ad::abs(ad::sub(ad::constant(x_phi), x_theta())), w_dist));
  };
  const Tensor x_phi = held(teacher_fn);
  report.losses.push_back(
      {"score_distillation_loss", grad_check([&] { return surrogate(x_phi); }, sp, epsilon, max_per_param)});
  disc.params().set_trainable(true);
  {
    Tensor fake_value;
    {
      ad::NoGradGuard g;
      fake_value = x_theta().value();
    }
    const Var fake = ad::constant(fake_value);
    report.losses.push_back({"adv_loss_d", grad_check([&] { return adv_loss_d(real, fake, disc, voc); }, disc.params().items(),
                                                      epsilon, max_per_param)});
  }

  // Stop-gradient: the loss gradient must equal the gradient with the teacher
  // output frozen, also when the student itself plays the teacher.
  {
    auto grads = [&](const std::function<Var()>& loss) {
      student.params().zero_grad();
      loss().backward();
      std::vector<Tensor> g;
      for (const auto& [_, v] : sp) g.push_back(v.has_grad() ? v.grad() : Tensor(v.value().shape()));
      return g;
    };
    auto compare = [&](const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
      for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[i].size(); ++j)
          report.stop_gradient_max = std::max(report.stop_gradient_max, std::abs(a[i][j] - b[i][j]));
    };
    compare(grads([&] { return score_distillation_loss(x_theta(), t_dist, eps_t, s, p, teacher_fn, sched); }),
            grads([&] { return surrogate(x_phi); }));
    const Tensor x_phi_self = held(student_fn);
    compare(grads([&] { return score_distillation_loss(x_theta(), t_dist, eps_t, s, p, student_fn, sched); }),
            grads([&] { return surrogate(x_phi_self); }));
    student.params().zero_grad();
  }
  {
    NoisePredictor open_teacher(net.predictor, derive_seed(seed, "gradcheck.teacher"), &sched);
    const Predictor open_fn(open_teacher);
    open_teacher.params().zero_grad();
    score_distillation_loss(x_theta(), t_dist, eps_t, s, p, open_fn, sched).backward();
    for (const auto& [_, v] : open_teacher.params().items())
      if (v.has_grad())
        for (double g : v.grad().values()) report.teacher_grad_max = std::max(report.teacher_grad_max, std::abs(g));
    student.params().zero_grad();
  }
  return report;
}

GradCheckReport stage_grad_check(const Stage& st) {
  StageScope scope(st, "grad-check");
  const GradCheckReport report = run_loss_grad_checks(derive_seed(st.seed(), "grad-check"));
  std::ostringstream os;
  os << "loss,max_rel_error,checked,skipped\n";
  for (const auto& l : report.losses) {
    os << l.loss << ',' << format_double(l.result.max_rel_error) << ',' << l.result.checked << ',' << l.result.skipped << '\n';
    say(st, l.loss + ": max relative error " + format_double(l.result.max_rel_error) + " over " +
                std::to_string(l.result.checked) + " entries");
  }
  os << "# stop_gradient_max " << format_double(report.stop_gradient_max) << ", teacher_grad_max "
     << format_double(report.teacher_grad_max) << '\n';
  write_text_file(st.paths.root / "grad_check.csv", os.str());
  return report;
}

}  // namespace vcd
