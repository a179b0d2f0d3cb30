// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "vcd/tensor.hpp"

namespace vcd::ad {

struct Node {
  Tensor value;
  Tensor grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into inputs that require grad.
  std::function<void(Node&)> backward;

  Tensor& grad_buffer();
  void accumulate(const Tensor& g);
};

// Handle to a value in the computation graph. Copies share the node, so a
// parameter can be referenced from several layers and the owning network.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  // Direct mutation is reserved for leaves (optimizer updates, checkpoint loads).
  Tensor& mutable_value();
  const Shape& shape() const { return node_->value.shape(); }
  int dim(int axis) const { return node_->value.dim(axis); }
  std::size_t size() const { return node_->value.size(); }
  double item() const { return node_->value.item(); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on);
  bool is_leaf() const { return node_ && !node_->backward; }

  bool has_grad() const { return node_ && !node_->grad.empty(); }
  const Tensor& grad() const { return node_->grad; }
  void zero_grad();

  // Reverse-mode sweep from a single-element output.
  void backward() const;
  Var detach() const;

  Node* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const noexcept { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

Var parameter(Tensor init);
Var constant(Tensor value);

bool grad_enabled() noexcept;

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Builds an op result. The graph edge is recorded only when gradients are
// enabled and at least one input requires them.
Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward);

// Records the branch pattern of non-smooth ops (abs, leaky ReLU) while
// alive. Finite-difference checks compare digests to discard probes that
// straddle a kink.
class KinkTrace {
 public:
  KinkTrace();
  ~KinkTrace();
  KinkTrace(const KinkTrace&) = delete;
  KinkTrace& operator=(const KinkTrace&) = delete;

  std::uint64_t digest() const noexcept { return digest_; }
  void record(std::span<const double> values, double threshold);

 private:
  KinkTrace* previous_;
  std::uint64_t digest_ = 0xcbf29ce484222325ULL;
};

void trace_kinks(std::span<const double> values, double threshold = 0.0);

}  // namespace vcd::ad
