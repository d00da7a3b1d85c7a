#include "mero/nn/optim.hpp"

#include <cmath>

namespace mero::nn {

Adam::Adam(std::vector<Var> params, AdamOptions options) : params_(std::move(params)), options_(options) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Var& p : params_) {
    m_.emplace_back(p.shape());
    v_.emplace_back(p.shape());
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Var& p = params_[i];
    const Tensor& g = p.grad();
    if (g.empty()) continue;
    Tensor& w = p.mutable_value();
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = options_.beta1 * m[k] + (1.0 - options_.beta1) * g[k];
      v[k] = options_.beta2 * v[k] + (1.0 - options_.beta2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      w[k] -= options_.lr * mhat / (std::sqrt(vhat) + options_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (Var& p : params_) p.zero_grad();
}

double clip_grad_norm(std::vector<Var>& params, double max_norm) {
  double sq = 0.0;
  for (const Var& p : params)
    for (double g : p.grad().storage()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double factor = max_norm / norm;
    for (Var& p : params)
      for (double& g : p.mutable_grad().storage()) g *= factor;
  }
  return norm;
}

}  // namespace mero::nn
