// SPDX-License-Identifier: Apache-2.0
#include "vcd/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>

#include "vcd/checkpoint.hpp"
#include "vcd/config.hpp"
#include "vcd/error.hpp"

namespace vcd {

MelDistance mel_distance(const MelSpectrogram& a, const MelSpectrogram& b) {
  if (a.bins != b.bins) {
    throw ShapeError("mel bin counts differ: " + std::to_string(a.bins) + " vs " + std::to_string(b.bins));
  }
  const int frames = std::min(a.frames, b.frames);
  if (frames <= 0 || a.bins <= 0) throw DataError("mel distance needs at least one overlapping frame");
  double l1 = 0.0, lsd = 0.0;
  for (int f = 0; f < frames; ++f) {
    double sq = 0.0;
    for (int m = 0; m < a.bins; ++m) {
      const double d = a.at(f, m) - b.at(f, m);
      l1 += std::abs(d);
      sq += d * d;
    }
    lsd += std::sqrt(sq / a.bins);
  }
  MelDistance out;
  out.l1 = l1 / (static_cast<double>(frames) * a.bins);
  out.lsd = lsd / frames;
  if (!std::isfinite(out.l1) || !std::isfinite(out.lsd)) throw NumericError("non-finite mel distance");
  return out;
}

EerCalibration calibrate_eer(std::span<const double> genuine, std::span<const double> impostor) {
  if (static_cast<int>(genuine.size()) < kMinTrials || static_cast<int>(impostor.size()) < kMinTrials) {
    throw DataError("EER calibration needs at least " + std::to_string(kMinTrials) + " genuine and impostor trials, got " +
                    std::to_string(genuine.size()) + " and " + std::to_string(impostor.size()));
  }
  std::vector<double> pooled(genuine.begin(), genuine.end());
  pooled.insert(pooled.end(), impostor.begin(), impostor.end());
  for (double v : pooled)
    if (!std::isfinite(v)) throw NumericError("non-finite verification score");
  std::sort(pooled.begin(), pooled.end());
  std::vector<double> candidates;
  candidates.push_back(pooled.front() - 1.0);
  for (std::size_t i = 0; i + 1 < pooled.size(); ++i)
    if (pooled[i + 1] > pooled[i]) candidates.push_back(0.5 * (pooled[i] + pooled[i + 1]));
  candidates.push_back(pooled.back() + 1.0);

  EerCalibration best;
  best.genuine = static_cast<int>(genuine.size());
  best.impostor = static_cast<int>(impostor.size());
  double best_gap = 2.0;
  for (double thr : candidates) {
    const double far = static_cast<double>(std::count_if(impostor.begin(), impostor.end(), [&](double v) { return v > thr; })) /
                       static_cast<double>(impostor.size());
    const double frr = static_cast<double>(std::count_if(genuine.begin(), genuine.end(), [&](double v) { return v <= thr; })) /
                       static_cast<double>(genuine.size());
    const double gap = std::abs(far - frr);
    if (gap < best_gap) {
      best_gap = gap;
      best.threshold = thr;
      best.eer = 50.0 * (far + frr);
    }
  }
  return best;
}

double acceptance_rate(std::span<const double> scores, double threshold) {
  if (static_cast<int>(scores.size()) < kMinTrials) {
    throw DataError("verification accuracy needs at least " + std::to_string(kMinTrials) + " trials, got " +
                    std::to_string(scores.size()));
  }
  long accepted = 0;
  for (double v : scores) {
    if (!std::isfinite(v)) throw NumericError("non-finite verification score");
    if (v > threshold) ++accepted;
  }
  return 100.0 * static_cast<double>(accepted) / static_cast<double>(scores.size());
}

void summarize(EvalReport& report) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const ConversionMetrics*>> groups;
  for (const auto& row : report.rows) {
    if (!groups.count(row.system)) order.push_back(row.system);
    groups[row.system].push_back(&row);
  }
  report.summary.clear();
  for (const auto& name : order) {
    const auto& rows = groups[name];
    if (static_cast<int>(rows.size()) < kMinTrials) {
      throw DataError("system '" + name + "' has " + std::to_string(rows.size()) + " trials; at least " +
                      std::to_string(kMinTrials) + " are required");
    }
    SystemSummary s;
    s.system = name;
    s.trials = static_cast<int>(rows.size());
    double accepted = 0.0, lsd = 0.0;
    for (const auto* r : rows) {
      s.mel_l1 += r->mel_l1;
      lsd += r->lsd;
      s.speaker_cosine += r->speaker_cosine;
      s.content_distance += r->content_distance;
      s.predictor_calls += static_cast<double>(r->predictor_calls);
      accepted += r->accepted ? 1.0 : 0.0;
    }
    const double n = static_cast<double>(s.trials);
    s.mel_l1 /= n;
    s.quality_proxy = -lsd / n;
    s.speaker_cosine /= n;
    s.content_distance /= n;
    s.predictor_calls /= n;
    s.sva = 100.0 * accepted / n;
    report.summary.push_back(s);
  }
}

const SystemSummary& find_system(const EvalReport& report, const std::string& system) {
  for (const auto& s : report.summary)
    if (s.system == system) return s;
  throw DataError("no evaluated system named '" + system + "'");
}

namespace {

std::string num(double v) { return format_double(v); }

}  // namespace

void write_conversions_csv(const std::filesystem::path& path, const EvalReport& report) {
  std::ostringstream os;
  os << "system,source,target_speaker,oracle,mel_l1,lsd,speaker_cosine,content_distance,accepted,predictor_calls\n";
  for (const auto& r : report.rows) {
    os << r.system << ',' << r.source << ',' << r.target_speaker << ',' << r.oracle << ',' << num(r.mel_l1) << ','
       << num(r.lsd) << ',' << num(r.speaker_cosine) << ',' << num(r.content_distance) << ',' << (r.accepted ? 1 : 0)
       << ',' << r.predictor_calls << '\n';
  }
  write_text_file(path, os.str());
}

void write_metrics_csv(const std::filesystem::path& path, const EvalReport& report) {
  std::ostringstream os;
  os << "system,trials,mel_l1_to_oracle,quality_proxy,speaker_cosine,sva_proxy,content_distance,predictor_calls,"
        "eer_threshold,eer\n";
  for (const auto& s : report.summary) {
    os << s.system << ',' << s.trials << ',' << num(s.mel_l1) << ',' << num(s.quality_proxy) << ','
       << num(s.speaker_cosine) << ',' << num(s.sva) << ',' << num(s.content_distance) << ',' << num(s.predictor_calls)
       << ',' << num(report.calibration.threshold) << ',' << num(report.calibration.eer) << '\n';
  }
  write_text_file(path, os.str());
}

std::string summary_table(const EvalReport& report) {
  std::ostringstream os;
  os << std::fixed;
  os << std::left << std::setw(18) << "Method" << std::right << std::setw(10) << "Calls" << std::setw(14) << "Quality(-LSD)"
     << std::setw(12) << "MelL1" << std::setw(14) << "ContentDist" << std::setw(10) << "SVA[%]" << '\n';
  for (const auto& s : report.summary) {
    os << std::left << std::setw(18) << s.system << std::right << std::setw(10) << std::setprecision(0) << s.predictor_calls
       << std::setw(14) << std::setprecision(4) << s.quality_proxy << std::setw(12) << s.mel_l1 << std::setw(14)
       << s.content_distance << std::setw(10) << std::setprecision(1) << s.sva << '\n';
  }
  os << "verification threshold " << std::setprecision(4) << report.calibration.threshold << " at EER "
     << std::setprecision(2) << report.calibration.eer << "% (" << report.calibration.genuine << " genuine, "
     << report.calibration.impostor << " impostor trials)\n";
  return os.str();
}

CostReport cost_report(std::vector<StageTiming> stages, const std::string& reference, const std::string& fast) {
  const StageTiming* ref = nullptr;
  const StageTiming* one = nullptr;
  for (const auto& s : stages) {
    if (s.system == reference) ref = &s;
    if (s.system == fast) one = &s;
  }
  if (!ref || !one) throw DataError("cost report needs timings for '" + reference + "' and '" + fast + "'");
  if (!(one->mel_seconds > 0.0) || !(one->total_seconds > 0.0)) throw NumericError("non-positive timing for '" + fast + "'");
  CostReport out;
  out.mel_speedup = ref->mel_seconds / one->mel_seconds;
  out.total_speedup = ref->total_seconds / one->total_seconds;
  out.stages = std::move(stages);
  return out;
}

void write_timing_csv(const std::filesystem::path& path, const CostReport& report) {
  std::ostringstream os;
  os << "system,predictor_calls,mel_seconds,total_seconds\n";
  for (const auto& s : report.stages)
    os << s.system << ',' << s.predictor_calls << ',' << num(s.mel_seconds) << ',' << num(s.total_seconds) << '\n';
  os << "# mel_speedup " << num(report.mel_speedup) << ", total_speedup " << num(report.total_speedup) << '\n';
  write_text_file(path, os.str());
}

}  // namespace vcd
