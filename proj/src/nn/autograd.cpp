#include "apcodec/nn/autograd.hpp"

#include <unordered_set>
#include <utility>

namespace apcodec::nn {

namespace {
thread_local bool g_grad_enabled = true;
}

Var::Var(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Var scalar(Real value) { return Var(Matrix::Constant(1, 1, value)); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var make_op(Matrix value, std::vector<Var> inputs, std::function<void(Node&)> backward,
            std::string_view op) {
  Var out;
  out.node_ = std::make_shared<Node>();
  out.node_->value = std::move(value);
  out.node_->op = op;
  if (!g_grad_enabled) return out;
  bool any = false;
  for (const Var& in : inputs) any = any || (in.defined() && in.requires_grad());
  if (!any) return out;
  out.node_->requires_grad = true;
  out.node_->backward = std::move(backward);
  out.node_->inputs.reserve(inputs.size());
  for (Var& in : inputs) out.node_->inputs.push_back(in.shared());
  return out;
}

Var detach(const Var& v) { return constant(v.value()); }

void backward(const Var& root) {
  backward(root, Matrix::Ones(root.rows(), root.cols()));
}

void backward(const Var& root, const Matrix& seed) {
  if (!root.defined() || !root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order with inputs first.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && child->backward && visited.insert(child).second)
        stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  root.node()->accumulate(seed);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && node->grad.size() != 0) {
      node->backward(*node);
      // Interior gradients are not needed once propagated.
      if (node != root.node()) node->grad.resize(0, 0);
    }
  }
}

}  // namespace apcodec::nn
