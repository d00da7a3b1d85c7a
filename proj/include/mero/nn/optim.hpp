#pragma once

#include <vector>

#include "mero/nn/autograd.hpp"

namespace mero::nn {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(std::vector<Var> params, AdamOptions options);

  // Applies one update from the accumulated gradients; parameters without a
  // gradient are skipped. Does not clear gradients.
  void step();
  void zero_grad();

  void set_lr(double lr) { options_.lr = lr; }
  double lr() const { return options_.lr; }
  long steps() const { return t_; }

 private:
  std::vector<Var> params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  AdamOptions options_;
  long t_ = 0;
};

// Rescales gradients in place so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_grad_norm(std::vector<Var>& params, double max_norm);

}  // namespace mero::nn
