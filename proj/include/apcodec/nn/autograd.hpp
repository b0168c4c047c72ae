#pragma once

// Minimal reverse-mode differentiation over dense Eigen matrices.
//
// A Var is a handle to a graph node holding a value matrix. Operations
// build new nodes that remember their inputs and a backward closure; calling
// backward(root) walks the graph in reverse topological order and
// accumulates gradients into every node that requires them. Feature maps use
// the (channels x frames) layout.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <string_view>
#include <vector>

namespace apcodec::nn {

using Real = double;
using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;
using Vector = Eigen::Matrix<Real, Eigen::Dynamic, 1>;
using Index = Eigen::Index;

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
  std::string_view op = "leaf";

  /// Adds `g` to this node's gradient (allocating it on first use).
  template <typename Derived>
  void accumulate(const Eigen::MatrixBase<Derived>& g) {
    if (!requires_grad) return;
    if (grad.size() == 0)
      grad = g;
    else
      grad += g;
  }

  /// Zero-initialised gradient buffer for partial (block) accumulation.
  Matrix& grad_storage() {
    if (grad.size() == 0) grad = Matrix::Zero(value.rows(), value.cols());
    return grad;
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(Matrix value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Matrix& value() const { return node_->value; }
  /// Mutable access for leaves (optimizer updates, checkpoint loads).
  Matrix& mutable_value() { return node_->value; }
  /// Gradient; an empty matrix until something has flowed into this node.
  const Matrix& grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.size() != 0; }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad() { node_->grad.resize(0, 0); }

  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  Real item() const { return node_->value(0, 0); }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }

 private:
  friend Var make_op(Matrix, std::vector<Var>, std::function<void(Node&)>, std::string_view);
  std::shared_ptr<Node> node_;
};

/// Trainable leaf.
inline Var parameter(Matrix value) { return Var(std::move(value), true); }
/// Constant leaf.
inline Var constant(Matrix value) { return Var(std::move(value), false); }
Var scalar(Real value);

/// Whether new operations record backward closures on this thread.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Builds a result node. The closure is dropped (and the result becomes a
/// constant) when grad mode is off or no input requires a gradient.
Var make_op(Matrix value, std::vector<Var> inputs, std::function<void(Node&)> backward,
            std::string_view op);

/// Same value, no gradient path.
Var detach(const Var& v);

/// Back-propagates from `root`, seeding with ones of the root's shape.
void backward(const Var& root);
void backward(const Var& root, const Matrix& seed);

}  // namespace apcodec::nn
