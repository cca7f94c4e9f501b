#include "autoprosam/core/autograd.hpp"

#include <unordered_set>

#include "autoprosam/core/errors.hpp"

namespace aps {

namespace {
thread_local bool t_grad_enabled = true;
}

void Node::accumulate_grad(const Tensor& g) {
  if (grad.empty()) {
    if (g.shape() != value.shape()) {
      throw ShapeError("gradient shape " + shape_to_string(g.shape()) + " does not match value " +
                       shape_to_string(value.shape()));
    }
    grad = g;
    return;
  }
  auto dst = grad.values();
  auto src = g.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void Node::accumulate_grad(std::int64_t i, double g) {
  if (grad.empty()) grad = Tensor(value.shape());
  grad[i] += g;
}

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Var(std::move(n));
}

Var leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return Var(std::move(n));
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

void backward(const Var& root) {
  if (root.numel() != 1) throw ShapeError("backward() requires a scalar root, got " + shape_to_string(root.shape()));
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->accumulate_grad(Tensor(root.shape(), 1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (!node->backward_fn || node->grad.empty()) continue;
    node->backward_fn(node->grad);
    // Interior gradients are not needed once propagated.
    node->grad = Tensor();
  }
}

namespace detail {

Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(const Tensor&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (!t_grad_enabled) return Var(std::move(n));
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return Var(std::move(n));
  n->requires_grad = true;
  n->inputs.reserve(inputs.size());
  for (auto& in : inputs) n->inputs.push_back(in.node());
  n->backward_fn = std::move(backward_fn);
  return Var(std::move(n));
}

}  // namespace detail
}  // namespace aps
