// SPDX-License-Identifier: Apache-2.0
// End-to-end acceptance run. Prints one PASS/FAIL line per criterion; the
// process fails on errors, and on any FAIL only with --strict.
#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "vcd/config.hpp"
#include "vcd/conversion.hpp"
#include "vcd/error.hpp"
#include "vcd/pipeline.hpp"
#include "vcd/random.hpp"
#include "vcd/schedule.hpp"

namespace fs = std::filesystem;
using namespace vcd;

namespace {

// Tolerances and thresholds, fixed here so a run cannot be tuned after the fact.
constexpr double kTelescopeRelTol = 1e-10;
constexpr int kTelescopeTrials = 100;
constexpr int kMomentDraws = 10000;
constexpr double kMomentSigmas = 3.0;
constexpr double kOracleTol = 1e-6;
constexpr int kOracleMels = 100;
constexpr double kGradRelTol = 1e-4;
constexpr double kLossAlgebraTol = 1e-6;
constexpr int kSmokeSteps = 200;
constexpr double kL1Ratio = 0.8;
constexpr double kSvaMargin = 5.0;
constexpr double kMinSpeedup = 10.0;

struct Verdict {
  int id;
  bool pass;
  std::string detail;
  double seconds;
};

std::vector<Verdict> verdicts;

void report(int id, bool pass, const std::string& detail, double seconds) {
  verdicts.push_back({id, pass, detail, seconds});
  std::cout << (pass ? "PASS" : "FAIL") << " criterion " << id << ": " << detail << " [" << std::fixed
            << std::setprecision(1) << seconds << " s]" << std::defaultfloat << std::endl;
}

double since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) { return format_double(v); }

using Table = std::vector<std::map<std::string, std::string>>;

// Header-keyed rows; lines starting with '#' are ignored.
Table read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  auto split = [](const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
  };
  std::string line;
  std::getline(in, line);
  const auto header = split(line);
  Table rows;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto cells = split(line);
    std::map<std::string, std::string> row;
    for (std::size_t i = 0; i < header.size() && i < cells.size(); ++i) row[header[i]] = cells[i];
    rows.push_back(std::move(row));
  }
  return rows;
}

const std::map<std::string, std::string>& row_for(const Table& t, const std::string& key, const std::string& value) {
  for (const auto& r : t)
    if (r.at(key) == value) return r;
  throw DataError("no row with " + key + " = " + value);
}

double num(const std::map<std::string, std::string>& row, const std::string& key) { return std::stod(row.at(key)); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void run_cli(const std::string& vcd, const fs::path& out, const std::string& args) {
  const std::string cmd = "\"" + vcd + "\" --out \"" + out.string() + "\" " + args;
  std::cout << "  $ vcd " << args << std::endl;
  const int rc = std::system(cmd.c_str());
  if (rc != 0) throw DataError("command failed (" + std::to_string(rc) + "): " + cmd);
}

// ---------------------------------------------------------------- criteria

void criterion_schedule() {
  const auto t0 = std::chrono::steady_clock::now();
  const NoiseSchedule sched = build_cosine_schedule(1000);
  Rng rng(derive_seed(1, "acceptance.telescope"));
  double worst_rel = 0.0;
  for (int trial = 0; trial < kTelescopeTrials; ++trial) {
    const int K = 1 + static_cast<int>(rng.uniform(0.0, 50.0));
    const int s_first = 1 + static_cast<int>(rng.uniform(0.0, 400.0));
    const int s_last = std::min(1000, s_first + K - 1 + static_cast<int>(rng.uniform(0.0, 600.0)));
    const SubSchedule sub = K == 1 ? subsequence_from_steps({s_last}, sched) : build_subsequence(K, s_first, s_last, sched);
    double prod = 1.0;
    for (double a : sub.alpha_sub) prod *= a;
    const double target = sched.alpha_bar[static_cast<std::size_t>(sub.S.back())];
    worst_rel = std::max(worst_rel, std::abs(prod - target) / target);
  }

  // Iterated single-step diffusion against the closed form, per scalar start value.
  Rng mc(derive_seed(1, "acceptance.moments"));
  const double x0 = 0.7;
  double worst_sigma = 0.0;
  for (int t : {1, 10, 100, 500, 950}) {
    Tensor x({kMomentDraws});
    for (double& v : x.values()) v = x0;
    Tensor z({kMomentDraws});
    for (int s = 1; s <= t; ++s) {
      mc.fill_normal(z.values());
      x = one_step_diffuse(x, s, z, sched);
    }
    double mean = 0.0, var = 0.0;
    for (double v : x.values()) mean += v;
    mean /= kMomentDraws;
    for (double v : x.values()) var += (v - mean) * (v - mean);
    var /= kMomentDraws - 1;
    const double ab = sched.alpha_bar[static_cast<std::size_t>(t)];
    const double mu = std::sqrt(ab) * x0, sigma2 = 1.0 - ab;
    const double z_mean = std::abs(mean - mu) / std::sqrt(sigma2 / kMomentDraws);
    const double z_var = std::abs(var - sigma2) / (sigma2 * std::sqrt(2.0 / (kMomentDraws - 1)));
    worst_sigma = std::max({worst_sigma, z_mean, z_var});
  }
  report(1, worst_rel < kTelescopeRelTol && worst_sigma < kMomentSigmas,
         "telescoping max rel err " + fmt(worst_rel) + " (< " + fmt(kTelescopeRelTol) + "), moment deviation " +
             fmt(worst_sigma) + " SE (< " + fmt(kMomentSigmas) + ")",
         since(t0));
}

void criterion_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  const NoiseSchedule sched = build_cosine_schedule(1000);
  Rng rng(derive_seed(1, "acceptance.oracle"));
  double worst = 0.0;
  for (int i = 0; i < kOracleMels; ++i) {
    const int F = 16 + static_cast<int>(rng.uniform(0.0, 200.0));
    ConversionRequest req;
    req.source = MelSpectrogram(F, 80);
    for (double& v : req.source.data) v = 2.0 * rng.normal();
    req.s_tgt = Tensor({64});
    req.p_src = Tensor({16, F});
    req.seed = derive_seed(1, "acceptance.oracle.pair", static_cast<std::uint64_t>(i));
    // The conversion draws its initial noise from Rng(seed) over the padded mel.
    const int Fp = (F + 3) / 4 * 4;
    Tensor eps({1, 80, Fp});
    Rng replay(req.seed);
    replay.fill_normal(eps.values());
    const Predictor oracle([&eps](const Var&, std::span<const int>, const Var&, const Var&) { return ad::constant(eps); });
    const ConversionResult res = convert_fast(req, oracle, sched);
    for (std::size_t k = 0; k < res.mel.data.size(); ++k) worst = std::max(worst, std::abs(res.mel.data[k] - req.source.data[k]));
  }
  report(2, worst < kOracleTol, "one-step reconstruction max abs err " + fmt(worst) + " over " +
                                    std::to_string(kOracleMels) + " mels (< " + fmt(kOracleTol) + ")",
         since(t0));
}

void criterion_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  const GradCheckReport r = run_loss_grad_checks(derive_seed(1, "acceptance.gradcheck"));
  double worst = 0.0;
  std::string parts;
  for (const auto& l : r.losses) {
    worst = std::max(worst, l.result.max_rel_error);
    parts += l.loss + " " + fmt(l.result.max_rel_error) + "; ";
  }
  report(3, worst < kGradRelTol && r.stop_gradient_max == 0.0 && r.teacher_grad_max == 0.0,
         parts + "stop-gradient diff " + fmt(r.stop_gradient_max) + ", teacher-path grad " + fmt(r.teacher_grad_max),
         since(t0));
}

void criterion_loss_algebra(const fs::path& log, double seconds) {
  const Table rows = read_csv(log);
  double worst = 0.0;
  for (const auto& r : rows)
    worst = std::max(worst, std::abs(num(r, "total_g") - (num(r, "adv_g") + 2.0 * num(r, "fm") + 45.0 * num(r, "dist"))));
  report(4, static_cast<int>(rows.size()) == kSmokeSteps && worst <= kLossAlgebraTol,
         std::to_string(rows.size()) + " logged steps, max |total - (adv + 2 FM + 45 dist)| = " + fmt(worst), seconds);
}

void criterion_efficacy(const fs::path& eval_dir, double seconds) {
  const Table m = read_csv(eval_dir / "metrics.csv");
  const auto& teacher = row_for(m, "system", "teacher-k1");
  const auto& student = row_for(m, "system", "student-k1");
  const double l1_t = num(teacher, "mel_l1_to_oracle"), l1_s = num(student, "mel_l1_to_oracle");
  const double sva_t = num(teacher, "sva_proxy"), sva_s = num(student, "sva_proxy");
  report(5, l1_s <= kL1Ratio * l1_t && sva_s >= sva_t + kSvaMargin,
         "L1 student " + fmt(l1_s) + " vs " + fmt(kL1Ratio) + " x teacher-k1 " + fmt(l1_t) + "; SVA student " + fmt(sva_s) +
             " vs teacher-k1 " + fmt(sva_t) + " + " + fmt(kSvaMargin),
         seconds);
}

void criterion_sweep(const fs::path& csv, double seconds) {
  const Table t = read_csv(csv);
  auto at = [&](const std::string& mode, int s_k) -> const std::map<std::string, std::string>& {
    for (const auto& r : t)
      if (r.at("mode") == mode && std::stoi(r.at("S_K")) == s_k) return r;
    throw DataError("sweep has no row for " + mode + " at " + std::to_string(s_k));
  };
  bool ok = true;
  std::string detail;
  for (const std::string mode : {"clean_source", "diffused_source"}) {
    const double sva50 = num(at(mode, 50), "sva_proxy"), sva950 = num(at(mode, 950), "sva_proxy");
    const double sva1000 = num(at(mode, 1000), "sva_proxy");
    const double q950 = num(at(mode, 950), "quality_proxy"), q1000 = num(at(mode, 1000), "quality_proxy");
    const bool rise = sva950 > sva50, drop = sva1000 < sva950 && q1000 < q950;
    ok = ok && rise && drop;
    detail += mode + ": SVA 50/950/1000 = " + fmt(sva50) + "/" + fmt(sva950) + "/" + fmt(sva1000) + ", quality 950/1000 = " +
              fmt(q950) + "/" + fmt(q1000) + (rise ? "" : " [no rise]") + (drop ? "" : " [no drop at T]") + "; ";
  }
  report(6, ok, detail, seconds);
}

void criterion_speed(const fs::path& eval_dir, double seconds) {
  const Table m = read_csv(eval_dir / "metrics.csv");
  const Table timing = read_csv(eval_dir / "timing.csv");
  const int c1 = static_cast<int>(num(row_for(m, "system", "student-k1"), "predictor_calls"));
  const int c6 = static_cast<int>(num(row_for(m, "system", "teacher-k6"), "predictor_calls"));
  const int c30 = static_cast<int>(num(row_for(m, "system", "teacher-k30"), "predictor_calls"));
  const double t30 = num(row_for(timing, "system", "teacher-k30"), "mel_seconds");
  const double t1 = num(row_for(timing, "system", "student-k1"), "mel_seconds");
  report(7, c1 == 1 && c6 == 6 && c30 == 30 && t30 >= kMinSpeedup * t1,
         "calls " + std::to_string(c1) + "/" + std::to_string(c6) + "/" + std::to_string(c30) + ", mel-conversion speedup " +
             fmt(t30 / t1) + "x (>= " + fmt(kMinSpeedup) + ")",
         seconds);
}

// Reduced training budgets keep two complete runs affordable; every stage still runs.
const char* kReducedSettings =
    "--set encoders.epochs=2 --set vocoder.steps=20 --set vocoder.eval_every=10 --set teacher.epochs=2 "
    "--set distill.steps=4 --set distill.batch=4 --set eval.timing_pairs=1";

void criterion_determinism(const std::string& vcd, const fs::path& root) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::string> csvs;
  for (const char* name : {"det_a", "det_b"}) {
    const fs::path dir = root / name;
    fs::remove_all(dir);
    for (const char* stage : {"gen-corpus", "extract-features", "train-encoders", "train-vocoder", "train-teacher", "distill",
                              "evaluate"})
      run_cli(vcd, dir, std::string("--seed 5 ") + kReducedSettings + " " + stage);
    csvs.push_back(slurp(dir / "eval" / "metrics.csv"));
  }
  report(8, !csvs[0].empty() && csvs[0] == csvs[1],
         "two seeded pipeline runs give " + std::string(csvs[0] == csvs[1] ? "byte-identical" : "DIFFERENT") +
             " metrics.csv (" + std::to_string(csvs[0].size()) + " bytes)",
         since(t0));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance run"};
  std::string vcd, workdir = "acceptance_run";
  bool strict = false, reuse = false;
  app.add_option("--vcd", vcd, "path to the vcd binary")->required()->check(CLI::ExistingFile);
  app.add_option("--workdir", workdir, "scratch directory for pipeline runs")->capture_default_str();
  app.add_flag("--strict", strict, "exit non-zero when any criterion fails");
  app.add_flag("--reuse", reuse, "reuse trained artifacts of a previous run in the work directory");
  CLI11_PARSE(app, argc, argv);

  try {
    const fs::path root = fs::absolute(workdir);
    fs::create_directories(root);
    criterion_schedule();
    criterion_oracle();
    criterion_gradients();

    const fs::path main_run = root / "main";
    const bool have = reuse && fs::exists(main_run / "teacher.ckpt");
    if (!have) {
      fs::remove_all(main_run);
      for (const char* stage : {"gen-corpus", "extract-features", "train-encoders", "train-vocoder", "train-teacher"})
        run_cli(vcd, main_run, stage);
    }
    auto t0 = std::chrono::steady_clock::now();
    const bool smoke = !have || !fs::exists(root / "smoke_distill_log.csv");
    if (smoke) {
      run_cli(vcd, main_run, "--set distill.steps=" + std::to_string(kSmokeSteps) + " distill");
      fs::copy_file(main_run / "distill_log.csv", root / "smoke_distill_log.csv", fs::copy_options::overwrite_existing);
    }
    criterion_loss_algebra(root / "smoke_distill_log.csv", since(t0));

    t0 = std::chrono::steady_clock::now();
    if (smoke || !fs::exists(main_run / "eval" / "metrics.csv")) {
      run_cli(vcd, main_run, "distill");
      run_cli(vcd, main_run, "evaluate");
    }
    const double eval_seconds = since(t0);
    criterion_efficacy(main_run / "eval", eval_seconds);

    t0 = std::chrono::steady_clock::now();
    run_cli(vcd, main_run, "sweep-init --grid 50:1000:50 --csv " + (main_run / "eval" / "sweep.csv").string());
    criterion_sweep(main_run / "eval" / "sweep.csv", since(t0));
    criterion_speed(main_run / "eval", eval_seconds);

    criterion_determinism(vcd, root);
  } catch (const std::exception& e) {
    std::cerr << "acceptance run aborted: " << e.what() << std::endl;
    return 1;
  }

  int failed = 0;
  for (const auto& v : verdicts) failed += v.pass ? 0 : 1;
  std::cout << verdicts.size() - failed << "/" << verdicts.size() << " criteria passed" << std::endl;
  return strict && failed > 0 ? 1 : 0;
}
