// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "vcd/autograd.hpp"
#include "vcd/ops.hpp"
#include "vcd/ops_conv.hpp"
#include "vcd/random.hpp"

namespace vcd::nn {

using ad::Var;

// Ordered, named collection of trainable leaves owned by one network.
class ParamSet {
 public:
  Var add(std::string name, Tensor init);

  const std::vector<std::pair<std::string, Var>>& items() const noexcept { return params_; }
  std::vector<Var> vars() const;
  std::size_t scalar_count() const;
  const Var& at(const std::string& name) const;

  void set_trainable(bool on);
  bool trainable() const noexcept { return trainable_; }
  void zero_grad();

  // FNV-1a over names, shapes and the raw bytes of every value.
  std::uint64_t hash() const;

  std::map<std::string, Tensor> state() const;
  // Shapes must match exactly and every parameter must be present.
  void load_state(const std::map<std::string, Tensor>& state, const std::string& prefix = "");
  void copy_values_from(const ParamSet& other);

 private:
  std::vector<std::pair<std::string, Var>> params_;
  bool trainable_ = true;
};

struct Linear {
  Var weight, bias;
  Linear() = default;
  Linear(ParamSet& ps, const std::string& name, int in, int out, Rng& rng, bool with_bias = true);
  Var operator()(const Var& x) const { return ad::linear(x, weight, bias); }
};

// 1-D convolution with optional weight normalization and explicit padding.
struct Conv1d {
  Var v, g, bias;
  bool weight_norm = false;
  ad::Conv1dOptions options;
  ad::PadMode pad_mode = ad::PadMode::zero;
  Conv1d() = default;
  Conv1d(ParamSet& ps, const std::string& name, int in, int out, int kernel, Rng& rng, bool weight_norm,
         int stride = 1, int dilation = 1, ad::PadMode pad_mode = ad::PadMode::zero);
  // Overrides the default "same" padding (dilation * (K - 1) / 2 on both sides).
  Conv1d& padding(int left, int right);
  Var weight() const;
  Var operator()(const Var& x) const;
};

struct ConvTranspose1d {
  Var v, g, bias;
  bool weight_norm = false;
  int stride = 1, pad = 0;
  ConvTranspose1d() = default;
  ConvTranspose1d(ParamSet& ps, const std::string& name, int in, int out, int kernel, int stride, int padding,
                  Rng& rng, bool weight_norm);
  Var weight() const;
  Var operator()(const Var& x) const;
};

}  // namespace vcd::nn
