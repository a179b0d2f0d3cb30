// SPDX-License-Identifier: Apache-2.0
#include "vcd/layers.hpp"

#include <cmath>
#include <cstring>

#include "vcd/error.hpp"

namespace vcd::nn {

Var ParamSet::add(std::string name, Tensor init) {
  for (const auto& [n, _] : params_)
    if (n == name) throw ParameterError("duplicate parameter name " + name);
  Var v = ad::parameter(std::move(init));
  v.set_requires_grad(trainable_);
  params_.emplace_back(std::move(name), v);
  return v;
}

std::vector<Var> ParamSet::vars() const {
  std::vector<Var> out;
  out.reserve(params_.size());
  for (const auto& [_, v] : params_) out.push_back(v);
  return out;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, v] : params_) n += v.size();
  return n;
}

const Var& ParamSet::at(const std::string& name) const {
  for (const auto& [n, v] : params_)
    if (n == name) return v;
  throw ParameterError("no parameter named " + name);
}

void ParamSet::set_trainable(bool on) {
  trainable_ = on;
  for (auto& [_, v] : params_) v.set_requires_grad(on);
}

void ParamSet::zero_grad() {
  for (auto& [_, v] : params_) v.zero_grad();
}

std::uint64_t ParamSet::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [name, v] : params_) {
    mix(name.data(), name.size());
    for (int d : v.shape()) mix(&d, sizeof d);
    mix(v.value().data(), v.size() * sizeof(double));
  }
  return h;
}

std::map<std::string, Tensor> ParamSet::state() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, v] : params_) out.emplace(name, v.value());
  return out;
}

void ParamSet::load_state(const std::map<std::string, Tensor>& state, const std::string& prefix) {
  for (auto& [name, v] : params_) {
    auto it = state.find(prefix + name);
    if (it == state.end()) throw DataError("checkpoint is missing parameter " + prefix + name);
    if (it->second.shape() != v.shape()) {
      throw DataError("parameter " + prefix + name + " has shape " + to_string(it->second.shape()) +
                      ", expected " + to_string(v.shape()));
    }
    v.mutable_value() = it->second;
  }
}

void ParamSet::copy_values_from(const ParamSet& other) { load_state(other.state()); }

namespace {
Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& x : t.values()) x = rng.uniform(-bound, bound);
  return t;
}

Tensor row_norms(const Tensor& v) {
  const int O = v.dim(0);
  const std::size_t inner = v.size() / static_cast<std::size_t>(O);
  Tensor g({O});
  for (int o = 0; o < O; ++o) {
    double s = 0.0;
    for (std::size_t i = 0; i < inner; ++i) s += v[o * inner + i] * v[o * inner + i];
    g[o] = std::sqrt(s);
  }
  return g;
}

}  // namespace

Linear::Linear(ParamSet& ps, const std::string& name, int in, int out, Rng& rng, bool with_bias) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight = ps.add(name + ".weight", uniform_tensor({out, in}, bound, rng));
  if (with_bias) bias = ps.add(name + ".bias", uniform_tensor({out}, bound, rng));
}

Conv1d::Conv1d(ParamSet& ps, const std::string& name, int in, int out, int kernel, Rng& rng, bool wn, int stride,
               int dilation, ad::PadMode mode)
    : weight_norm(wn), pad_mode(mode) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in) * kernel);
  Tensor w = uniform_tensor({out, in, kernel}, bound, rng);
  if (weight_norm) {
    g = ps.add(name + ".weight_g", row_norms(w));
    v = ps.add(name + ".weight_v", std::move(w));
  } else {
    v = ps.add(name + ".weight", std::move(w));
  }
  bias = ps.add(name + ".bias", uniform_tensor({out}, bound, rng));
  options.stride = stride;
  options.dilation = dilation;
  options.padding_left = options.padding_right = dilation * (kernel - 1) / 2;
}

Conv1d& Conv1d::padding(int left, int right) {
  options.padding_left = left;
  options.padding_right = right;
  return *this;
}

Var Conv1d::weight() const { return weight_norm ? ad::weight_norm(v, g) : v; }

Var Conv1d::operator()(const Var& x) const {
  if (pad_mode == ad::PadMode::zero) return ad::conv1d(x, weight(), bias, options);
  Var padded = ad::pad_time(x, options.padding_left, options.padding_right, pad_mode);
  ad::Conv1dOptions opt = options;
  opt.padding_left = opt.padding_right = 0;
  return ad::conv1d(padded, weight(), bias, opt);
}

ConvTranspose1d::ConvTranspose1d(ParamSet& ps, const std::string& name, int in, int out, int kernel, int stride_,
                                 int padding, Rng& rng, bool wn)
    : weight_norm(wn), stride(stride_), pad(padding) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in) * kernel / stride_);
  Tensor w = uniform_tensor({in, out, kernel}, bound, rng);
  if (weight_norm) {
    g = ps.add(name + ".weight_g", row_norms(w));
    v = ps.add(name + ".weight_v", std::move(w));
  } else {
    v = ps.add(name + ".weight", std::move(w));
  }
  bias = ps.add(name + ".bias", uniform_tensor({out}, bound, rng));
}

Var ConvTranspose1d::weight() const { return weight_norm ? ad::weight_norm(v, g) : v; }

Var ConvTranspose1d::operator()(const Var& x) const { return ad::conv_transpose1d(x, weight(), bias, stride, pad); }

}  // namespace vcd::nn
