#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "mero/nn/tensor.hpp"

namespace mero::nn {

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  // Zero-initialised gradient buffer shaped like value.
  Tensor& grad_buffer();
};

// Handle to a value in a dynamically recorded computation graph. Copies share
// the node. Leaves created with requires_grad accumulate gradients across
// backward() calls until zero_grad().
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  Tensor& mutable_grad() { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  const Shape& shape() const { return node_->value.shape(); }
  int dim(int i) const { return node_->value.dim(i); }
  double item() const { return node_->value.item(); }
  const std::shared_ptr<Node>& node() const { return node_; }

  // Reverse-mode sweep from this scalar. Interior gradients are released
  // afterwards; leaf gradients remain.
  void backward() const;
  void zero_grad();

 private:
  std::shared_ptr<Node> node_;
};

bool grad_enabled();

// Disables graph recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Builds an op result. The backward closure receives the result node; it is
// recorded only when grad mode is on and some parent requires a gradient.
Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward);

}  // namespace mero::nn
