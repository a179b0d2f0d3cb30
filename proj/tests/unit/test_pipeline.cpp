// SPDX-License-Identifier: Apache-2.0
#include <filesystem>
#include <string>

#include "test_util.hpp"
#include "vcd/pipeline.hpp"

namespace vcd {
namespace {

namespace fs = std::filesystem;

KeyValues with(std::initializer_list<std::pair<const char*, const char*>> sets) {
  KeyValues kv;
  for (const auto& [k, v] : sets) kv.set(k, v);
  return kv;
}

TEST(RunConfig, DefaultsCarryDocumentedValues) {
  const KeyValues kv = resolve_run_config({});
  EXPECT_EQ(kv.get_string("model.preset"), "toy");
  EXPECT_EQ(kv.get_double("distill.lambda_fm"), 2.0);
  EXPECT_EQ(kv.get_double("distill.lambda_dist"), 45.0);
  EXPECT_EQ(kv.get_int("distill.s_k"), 950);
  EXPECT_EQ(kv.get_int("distill.batch"), 32);
  EXPECT_EQ(kv.get_double("distill.lr"), 2e-4);
  EXPECT_EQ(kv.get_int("schedule.T"), 1000);
  EXPECT_EQ(kv.get_int("corpus.n_speakers"), 10);
  EXPECT_EQ(kv.get_int("corpus.n_scripts"), 20);
  const DistillConfig dc = distill_config(kv);
  EXPECT_EQ(dc.beta1, 0.5);
  EXPECT_EQ(dc.beta2, 0.9);
  EXPECT_EQ(dc.target, TeacherTarget::x0_prediction);
}

TEST(RunConfig, PresetSelectsNetworkShapes) {
  const KeyValues kv = resolve_run_config(with({{"model.preset", "paper"}}));
  EXPECT_EQ(network_config(kv).predictor.hidden, 512);
  EXPECT_EQ(network_config(kv).predictor.n_layers, 12);
}

TEST(RunConfig, RejectsInconsistentSettings) {
  EXPECT_THROW(resolve_run_config(with({{"no.such.key", "1"}})), ConfigError);
  EXPECT_THROW(resolve_run_config(with({{"features.n_mels", "40"}})), ConfigError);
  EXPECT_THROW(resolve_run_config(with({{"features.hop", "128"}})), ConfigError);
  EXPECT_THROW(resolve_run_config(with({{"convert.s_first", "960"}})), ConfigError);
  EXPECT_THROW(resolve_run_config(with({{"distill.s_k", "1001"}})), ConfigError);
  EXPECT_THROW(resolve_run_config(with({{"distill.target", "mean"}})), ConfigError);
  EXPECT_THROW(resolve_run_config(with({{"model.predictor.n_layers", "8"}})), ConfigError);
  EXPECT_THROW(resolve_run_config(with({{"teacher.crop", "30"}})), ConfigError);
  EXPECT_THROW(resolve_run_config(with({{"model.preset", "huge"}})), ConfigError);
}

TEST(ArtifactLock, SecondWriterFails) {
  const fs::path dir = fs::temp_directory_path() / "vcd_test_lock";
  fs::remove_all(dir);
  fs::create_directories(dir);
  {
    ArtifactLock a(dir / ".vcd.lock");
    EXPECT_TRUE(fs::exists(dir / ".vcd.lock"));
    EXPECT_THROW(ArtifactLock(dir / ".vcd.lock"), DataError);
  }
  EXPECT_FALSE(fs::exists(dir / ".vcd.lock"));
  EXPECT_NO_THROW(ArtifactLock(dir / ".vcd.lock"));
  fs::remove_all(dir);
}

TEST(Stages, MissingPrerequisiteNamesThePath) {
  const fs::path dir = fs::temp_directory_path() / "vcd_test_missing";
  fs::remove_all(dir);
  Stage st{resolve_run_config({}), RunPaths{dir}, {}};
  try {
    stage_train_teacher(st);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(dir.string()), std::string::npos) << e.what();
  }
  try {
    require_artifact(dir / "teacher.ckpt", "train-teacher");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("train-teacher"), std::string::npos);
  }
  fs::remove_all(dir);
}

TEST(LossGradChecks, AnalyticMatchesNumericAndStopGradientHolds) {
  const GradCheckReport r = run_loss_grad_checks(3, 6);
  ASSERT_EQ(r.losses.size(), 5u);
  for (const auto& l : r.losses) {
    EXPECT_LT(l.result.max_rel_error, 1e-4) << l.loss << " worst " << l.result.worst;
    EXPECT_GT(l.result.checked, 0u) << l.loss;
  }
  EXPECT_EQ(r.stop_gradient_max, 0.0);
  EXPECT_EQ(r.teacher_grad_max, 0.0);
}

}  // namespace
}  // namespace vcd
