// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vcd/features.hpp"

namespace vcd {

struct MelDistance {
  double l1 = 0.0;
  double lsd = 0.0;  // mean over frames of the per-frame RMS difference
};

// Compares the overlapping leading frames; bins must agree.
MelDistance mel_distance(const MelSpectrogram& a, const MelSpectrogram& b);

struct EerCalibration {
  double threshold = 0.0;
  double eer = 0.0;  // percent
  int genuine = 0;
  int impostor = 0;
};

inline constexpr int kMinTrials = 10;

// Accept iff score > threshold. The threshold minimizes |FAR - FRR| over the
// midpoints of the sorted pooled scores; ties keep the lowest threshold.
EerCalibration calibrate_eer(std::span<const double> genuine, std::span<const double> impostor);
// Percentage of trials accepted at `threshold`.
double acceptance_rate(std::span<const double> scores, double threshold);

struct ConversionMetrics {
  std::string system;
  std::string source;
  std::string target_speaker;
  std::string oracle;
  double mel_l1 = 0.0;
  double lsd = 0.0;
  double speaker_cosine = 0.0;
  double content_distance = 0.0;
  bool accepted = false;
  long predictor_calls = 0;
};

struct SystemSummary {
  std::string system;
  int trials = 0;
  double mel_l1 = 0.0;
  double quality_proxy = 0.0;  // -LSD
  double speaker_cosine = 0.0;
  double sva = 0.0;
  double content_distance = 0.0;
  double predictor_calls = 0.0;
};

struct EvalReport {
  EerCalibration calibration;
  std::vector<ConversionMetrics> rows;
  std::vector<SystemSummary> summary;  // one per system, in first-appearance order
};

// Recomputes `summary` from `rows`; requires kMinTrials rows per system.
void summarize(EvalReport& report);
const SystemSummary& find_system(const EvalReport& report, const std::string& system);

void write_conversions_csv(const std::filesystem::path& path, const EvalReport& report);
void write_metrics_csv(const std::filesystem::path& path, const EvalReport& report);
std::string summary_table(const EvalReport& report);

struct StageTiming {
  std::string system;
  long predictor_calls = 0;
  double mel_seconds = 0.0;    // mel conversion only
  double total_seconds = 0.0;  // feature extraction + conversion + vocoder
};

struct CostReport {
  std::vector<StageTiming> stages;
  double mel_speedup = 0.0;    // time(reference) / time(fast)
  double total_speedup = 0.0;
};

CostReport cost_report(std::vector<StageTiming> stages, const std::string& reference, const std::string& fast);
void write_timing_csv(const std::filesystem::path& path, const CostReport& report);

}  // namespace vcd
