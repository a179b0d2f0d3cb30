// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace vcd {

// Seeded generator with platform-independent uniform and normal draws.
// std::normal_distribution is implementation-defined, so the normal
// variates are produced here with the polar method on top of mt19937_64.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [lo, hi].
  int uniform_int(int lo, int hi);
  double normal();
  void fill_normal(std::span<double> out);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a(std::string_view text);

// Stage seeds fan out from one global seed through a named hash, so
// re-running one stage never perturbs another.
std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view name);
std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view name, std::uint64_t index);

}  // namespace vcd
