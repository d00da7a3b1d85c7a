#include "mero/nn/autograd.hpp"

#include <unordered_set>

#include "mero/error.hpp"

namespace mero::nn {
namespace {
thread_local bool g_grad_enabled = true;
}

Tensor& Node::grad_buffer() {
  if (grad.size() != value.size() || grad.shape() != value.shape()) grad = Tensor(value.shape());
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

void Var::backward() const {
  MERO_CHECK(defined(), "backward on undefined Var");
  MERO_CHECK(node_->value.size() == 1, "backward requires a scalar, got " + shape_str(node_->value.shape()));
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  // Owning pointers: detaching a processed node must not free its parents.
  std::vector<std::shared_ptr<Node>> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<std::shared_ptr<Node>, std::size_t>> stack{{node_, 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      std::shared_ptr<Node> p = n->parents[idx++];
      if (p && p->requires_grad && visited.insert(p.get()).second) stack.emplace_back(std::move(p), 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = it->get();
    if (!n->backward) continue;
    if (n->grad.empty()) n->grad_buffer();
    n->backward(*n);
    // Interior node: free its gradient and detach from the graph.
    n->grad = Tensor();
    n->backward = nullptr;
    n->parents.clear();
  }
}

void Var::zero_grad() {
  if (node_) node_->grad = Tensor();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (g_grad_enabled) {
    bool any = false;
    for (const Var& p : parents) any = any || (p.defined() && p.requires_grad());
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(parents.size());
      for (const Var& p : parents) node->parents.push_back(p.node());
      node->backward = std::move(backward);
    }
  }
  return Var(std::move(node));
}

}  // namespace mero::nn
