// SPDX-License-Identifier: Apache-2.0
#include "vcd/autograd.hpp"

#include <algorithm>
#include <unordered_set>

#include "vcd/error.hpp"

namespace vcd::ad {

namespace {
thread_local bool t_grad_enabled = true;
thread_local KinkTrace* t_kink_trace = nullptr;
}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.empty()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

void Node::accumulate(const Tensor& g) {
  Tensor& buf = grad_buffer();
  require_same_shape(buf, g, "gradient accumulation");
  double* d = buf.data();
  const double* s = g.data();
  for (std::size_t i = 0; i < buf.size(); ++i) d[i] += s[i];
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor& Var::mutable_value() {
  if (!is_leaf()) throw ContractViolation("mutable_value() on a non-leaf graph node");
  return node_->value;
}

void Var::set_requires_grad(bool on) {
  if (!is_leaf()) throw ContractViolation("set_requires_grad() on a non-leaf graph node");
  node_->requires_grad = on;
  if (!on) node_->grad = Tensor();
}

void Var::zero_grad() {
  if (node_ && !node_->grad.empty()) node_->grad.fill(0.0);
}

void Var::backward() const {
  if (!node_) throw ContractViolation("backward() on an undefined Var");
  if (node_->value.size() != 1) throw ShapeError("backward() requires a single-element output");
  if (!node_->requires_grad) return;

  // Iterative post-order DFS; reversed order is a valid topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node* child = n->inputs[next++].get();
      if (child->requires_grad && !visited.count(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad_buffer().fill(1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

Var Var::detach() const {
  Var v;
  v.node_ = std::make_shared<Node>();
  v.node_->value = node_->value;
  return v;
}

Var parameter(Tensor init) { return Var(std::move(init), true); }
Var constant(Tensor value) { return Var(std::move(value), false); }

bool grad_enabled() noexcept { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
  Var out(std::move(value), false);
  if (!t_grad_enabled) return out;
  const bool needs = std::any_of(inputs.begin(), inputs.end(), [](const Var& v) { return v.requires_grad(); });
  if (!needs) return out;
  Node* n = out.node();
  n->requires_grad = true;
  n->inputs.reserve(inputs.size());
  for (const Var& v : inputs) n->inputs.push_back(v.node_ptr());
  n->backward = std::move(backward);
  return out;
}

KinkTrace::KinkTrace() : previous_(t_kink_trace) { t_kink_trace = this; }
KinkTrace::~KinkTrace() { t_kink_trace = previous_; }

void KinkTrace::record(std::span<const double> values, double threshold) {
  std::uint64_t word = 0;
  int bits = 0;
  auto mix = [this](std::uint64_t w) {
    digest_ ^= w;
    digest_ *= 0x100000001b3ULL;
    digest_ ^= digest_ >> 29;
  };
  for (double v : values) {
    word = (word << 1) | (v >= threshold ? 1U : 0U);
    if (++bits == 64) {
      mix(word);
      word = 0;
      bits = 0;
    }
  }
  mix(word ^ (static_cast<std::uint64_t>(bits) << 58));
}

void trace_kinks(std::span<const double> values, double threshold) {
  if (t_kink_trace) t_kink_trace->record(values, threshold);
}

}  // namespace vcd::ad
