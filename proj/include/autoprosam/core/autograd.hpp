#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "autoprosam/core/tensor.hpp"

namespace aps {

// Reverse-mode autodiff graph node. Non-leaf nodes keep their inputs alive and
// a closure that maps the node's output gradient onto the inputs.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(const Tensor& grad_out)> backward_fn;

  void accumulate_grad(const Tensor& g);
  void accumulate_grad(std::int64_t i, double g);
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const Shape& shape() const { return node_->value.shape(); }
  std::int64_t dim(std::int64_t axis) const { return node_->value.dim(axis); }
  std::int64_t numel() const { return node_->value.numel(); }

  void zero_grad() { node_->grad = Tensor(); }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }

  const std::shared_ptr<Node>& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Tensor value);
// Leaf with requires_grad set; gradients accumulate until zero_grad().
Var leaf(Tensor value, bool requires_grad = true);

// Seeds d(root)/d(root) = 1 (root must be a scalar) and propagates.
void backward(const Var& root);

bool grad_enabled();

// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {
// Wraps an op result; records the backward closure only when recording is on
// and at least one input requires a gradient.
Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(const Tensor&)> backward_fn);
}  // namespace detail

}  // namespace aps
