// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "vcd/config.hpp"
#include "vcd/conversion.hpp"
#include "vcd/distill.hpp"
#include "vcd/encoders.hpp"
#include "vcd/evaluation.hpp"
#include "vcd/grad_check.hpp"
#include "vcd/teacher.hpp"
#include "vcd/vocoder_training.hpp"

namespace vcd {

using Logger = std::function<void(const std::string&)>;

// Every recognised key with its default for the given network preset.
KeyValues default_run_config(const std::string& preset = "toy");
// Defaults for the preset named in `overrides` (key model.preset, else "toy"),
// then `overrides` applied on top; unknown keys are rejected.
KeyValues resolve_run_config(const KeyValues& overrides);

CorpusSpec corpus_spec(const KeyValues& cfg);
FeatureConfig feature_config(const KeyValues& cfg);
NoiseSchedule run_schedule(const KeyValues& cfg);
NetworkPreset network_config(const KeyValues& cfg);
EncoderTrainConfig encoder_train_config(const KeyValues& cfg);
VocoderTrainConfig vocoder_train_config(const KeyValues& cfg);
TeacherTrainConfig teacher_train_config(const KeyValues& cfg);
DistillConfig distill_config(const KeyValues& cfg);

// Artifact layout under the run directory.
struct RunPaths {
  std::filesystem::path root;
  std::filesystem::path corpus() const { return root / "corpus"; }
  std::filesystem::path features() const { return root / "features"; }
  std::filesystem::path encoders() const { return root / "encoders.ckpt"; }
  std::filesystem::path vocoder() const { return root / "vocoder.ckpt"; }
  std::filesystem::path teacher() const { return root / "teacher.ckpt"; }
  std::filesystem::path student() const { return root / "student.ckpt"; }
  std::filesystem::path eval() const { return root / "eval"; }
  std::filesystem::path lock() const { return root / ".vcd.lock"; }
  std::filesystem::path resolved_config(const std::string& stage) const { return root / ("config." + stage + ".txt"); }
};

// Sentinel file held for the lifetime of a stage; a second writer fails with DataError.
class ArtifactLock {
 public:
  explicit ArtifactLock(const std::filesystem::path& path);
  ~ArtifactLock();
  ArtifactLock(const ArtifactLock&) = delete;
  ArtifactLock& operator=(const ArtifactLock&) = delete;

 private:
  std::filesystem::path path_;
};

// Throws DataError naming `path` when it does not exist.
void require_artifact(const std::filesystem::path& path, const std::string& produced_by);

struct Stage {
  KeyValues cfg;
  RunPaths paths;
  Logger log;
  std::uint64_t seed() const { return cfg.get_u64("seed"); }
};

// Creates the run directory, takes the lock and writes the resolved config for `name`.
class StageScope {
 public:
  StageScope(const Stage& stage, const std::string& name);

 private:
  ArtifactLock lock_;
};

struct EncoderModels {
  SpeakerEncoder speaker;
  ContentEncoder content;
  SpeakerEncoder verifier;  // separate network used only for evaluation
};

EncoderModels load_encoders(const std::filesystem::path& path);
Vocoder load_vocoder(const std::filesystem::path& path);
NoisePredictor load_predictor(const std::filesystem::path& path);
void save_predictor(const std::filesystem::path& path, const NoisePredictor& model, const NoiseSchedule& sched,
                    const NormStats& stats, const std::string& role);

void stage_gen_corpus(const Stage& st);
void stage_extract_features(const Stage& st);
void stage_train_encoders(const Stage& st);
VocoderTrainResult stage_train_vocoder(const Stage& st);
std::vector<TeacherLogRow> stage_train_teacher(const Stage& st);
DistillResult stage_distill(const Stage& st);

struct ConvertArgs {
  std::filesystem::path source;  // .wav or .mel (raw log-mel)
  std::filesystem::path target;  // reference utterance, .wav or .mel
  std::string model = "student";  // student | teacher
  int K = 1;
  InitMode init = InitMode::diffused_source;
  int s_first = 50;
  int s_last = 950;
  std::filesystem::path out_mel;
  std::filesystem::path out_wav;  // optional
};
ConversionResult stage_convert(const Stage& st, const ConvertArgs& args);

std::vector<SweepRow> stage_sweep(const Stage& st, const std::vector<int>& grid, const std::filesystem::path& csv);
void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows);

struct EvalOutcome {
  EvalReport report;
  CostReport cost;
};
EvalOutcome stage_evaluate(const Stage& st);

struct LossGradCheck {
  std::string loss;
  GradCheckResult result;
};
struct GradCheckReport {
  std::vector<LossGradCheck> losses;
  // Largest |difference| between the distillation gradient and the gradient
  // with the teacher output supplied as a constant.
  double stop_gradient_max = 0.0;
  // Largest |gradient| reaching a trainable teacher that shares no storage with the student.
  double teacher_grad_max = 0.0;
};
GradCheckReport run_loss_grad_checks(std::uint64_t seed, std::size_t max_per_param = 0, double epsilon = 1e-4);
GradCheckReport stage_grad_check(const Stage& st);

}  // namespace vcd
