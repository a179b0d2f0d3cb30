// SPDX-License-Identifier: Apache-2.0
#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "vcd/error.hpp"
#include "vcd/pipeline.hpp"

namespace {

// Exit status per error category; 1 is reserved for unexpected failures.
int exit_code(vcd::ErrorCategory c) {
  switch (c) {
    case vcd::ErrorCategory::config: return 2;
    case vcd::ErrorCategory::data: return 3;
    case vcd::ErrorCategory::numeric: return 4;
    case vcd::ErrorCategory::shape: return 5;
    case vcd::ErrorCategory::parameter: return 6;
    case vcd::ErrorCategory::contract: return 7;
  }
  return 1;
}

vcd::KeyValues overrides_from(const std::string& config_path, const std::string& preset,
                              const std::vector<std::string>& sets, const std::string& seed) {
  vcd::KeyValues kv;
  if (!config_path.empty()) kv = vcd::KeyValues::load(config_path);
  if (!preset.empty()) kv.set("model.preset", preset);
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw vcd::ConfigError("--set expects key=value, got '" + s + "'");
    kv.set(s.substr(0, eq), s.substr(eq + 1));
  }
  if (!seed.empty()) kv.set("seed", seed);
  return kv;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diffusion voice conversion with one-step distillation"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, preset, seed, out = "run";
  std::vector<std::string> sets;
  app.add_option("--config", config_path, "key = value configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "global seed; every stage seed derives from it");
  app.add_option("--out", out, "artifact directory")->capture_default_str();
  app.add_option("--preset", preset, "network preset")->check(CLI::IsMember({"toy", "paper", "tiny"}));
  app.add_option("--set", sets, "override one configuration key (key=value); repeatable");

  auto* gen = app.add_subcommand("gen-corpus", "render the synthetic multi-speaker corpus");
  auto* feats = app.add_subcommand("extract-features", "compute normalized log-mel features");
  auto* enc = app.add_subcommand("train-encoders", "train the speaker, content and verification encoders");
  auto* voc = app.add_subcommand("train-vocoder", "train the mel-to-waveform vocoder");
  auto* teacher = app.add_subcommand("train-teacher", "train the multi-step diffusion teacher");
  auto* dist = app.add_subcommand("distill", "distill the teacher into a one-step student");

  auto* conv = app.add_subcommand("convert", "convert one utterance to the voice of a reference utterance");
  vcd::ConvertArgs cargs;
  std::string init_mode;
  int s_first = -1, s_last = -1;
  std::string out_mel, out_wav;
  std::string source, target;
  conv->add_option("--source", source, "source utterance (.wav or .mel)")->required();
  conv->add_option("--target", target, "target-speaker reference (.wav or .mel)")->required();
  conv->add_option("--model", cargs.model, "student or teacher")->check(CLI::IsMember({"student", "teacher"}))->capture_default_str();
  conv->add_option("--k", cargs.K, "number of reverse steps")->check(CLI::PositiveNumber)->capture_default_str();
  conv->add_option("--init", init_mode, "clean_source, diffused_source or pure_noise (default: diffused for K=1, else clean)");
  conv->add_option("--s-first", s_first, "smallest step of the ladder (default convert.s_first)");
  conv->add_option("--s-last", s_last, "initial step S_K (default convert.s_last)");
  conv->add_option("--output", out_mel, "converted log-mel file")->required();
  conv->add_option("--wav", out_wav, "also write a vocoded waveform");

  auto* sweep = app.add_subcommand("sweep-init", "one-step conversion quality over initial steps S_K");
  std::string grid = "50:1000:50", sweep_csv;
  sweep->add_option("--grid", grid, "begin:end:step")->capture_default_str();
  sweep->add_option("--csv", sweep_csv, "output CSV (default OUT/eval/sweep.csv)");

  auto* eval = app.add_subcommand("evaluate", "objective metrics and cost report for all systems");
  auto* gc = app.add_subcommand("grad-check", "finite-difference checks of every training loss");

  CLI11_PARSE(app, argc, argv);

  try {
    vcd::Stage st;
    st.cfg = vcd::resolve_run_config(overrides_from(config_path, preset, sets, seed));
    st.paths.root = out;
    st.log = [](const std::string& msg) { std::cout << msg << std::endl; };

    if (*gen) vcd::stage_gen_corpus(st);
    if (*feats) vcd::stage_extract_features(st);
    if (*enc) vcd::stage_train_encoders(st);
    if (*voc) vcd::stage_train_vocoder(st);
    if (*teacher) vcd::stage_train_teacher(st);
    if (*dist) vcd::stage_distill(st);
    if (*conv) {
      cargs.source = source;
      cargs.target = target;
      cargs.out_mel = out_mel;
      cargs.out_wav = out_wav;
      cargs.s_first = s_first > 0 ? s_first : st.cfg.get_int("convert.s_first");
      cargs.s_last = s_last > 0 ? s_last : st.cfg.get_int("convert.s_last");
      cargs.init = init_mode.empty() ? (cargs.K == 1 ? vcd::InitMode::diffused_source : vcd::InitMode::clean_source)
                                     : vcd::parse_init_mode(init_mode);
      vcd::stage_convert(st, cargs);
    }
    if (*sweep) {
      vcd::stage_sweep(st, vcd::parse_grid(grid), sweep_csv.empty() ? st.paths.eval() / "sweep.csv" : std::filesystem::path(sweep_csv));
    }
    if (*eval) {
      const auto res = vcd::stage_evaluate(st);
      std::cout << "mel-conversion speedup " << res.cost.mel_speedup << "x, total " << res.cost.total_speedup << "x\n";
    }
    if (*gc) {
      const auto report = vcd::stage_grad_check(st);
      bool ok = report.stop_gradient_max == 0.0 && report.teacher_grad_max == 0.0;
      for (const auto& l : report.losses) ok = ok && l.result.max_rel_error < 1e-4;
      if (!ok) throw vcd::NumericError("gradient check failed (see grad_check.csv)");
      std::cout << "all gradient checks passed" << std::endl;
    }
  } catch (const vcd::Error& e) {
    std::cerr << "error [" << vcd::to_string(e.category()) << "]: " << e.what() << std::endl;
    return exit_code(e.category());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
