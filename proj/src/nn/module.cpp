#include "mero/nn/module.hpp"

#include <cmath>

#include "mero/error.hpp"

namespace mero::nn {

std::vector<std::pair<std::string, Var>> Module::named_parameters() {
  std::vector<std::pair<std::string, Var>> out;
  visit_parameters("", [&](const std::string& name, Var& p) { out.emplace_back(name, p); });
  return out;
}

std::vector<Var> Module::parameters() {
  std::vector<Var> out;
  visit_parameters("", [&](const std::string&, Var& p) { out.push_back(p); });
  return out;
}

std::size_t Module::parameter_count() {
  std::size_t n = 0;
  visit_parameters("", [&](const std::string&, Var& p) { n += p.value().size(); });
  return n;
}

void Module::zero_grad() {
  visit_parameters("", [](const std::string&, Var& p) { p.zero_grad(); });
}

Var make_parameter(Tensor init) { return Var(std::move(init), true); }

Linear::Linear(int in_features, int out_features, Rng& rng, bool with_bias) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_features));
  weight = make_parameter(rng.uniform_tensor({in_features, out_features}, -bound, bound));
  if (with_bias) bias = make_parameter(rng.uniform_tensor({out_features}, -bound, bound));
}

void Linear::visit_parameters(const std::string& prefix, const ParamVisitor& fn) {
  fn(join_name(prefix, "weight"), weight);
  if (bias.defined()) fn(join_name(prefix, "bias"), bias);
}

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad, Rng& rng, bool with_bias)
    : stride_(stride), pad_(pad) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_channels * kernel * kernel));
  weight = make_parameter(rng.uniform_tensor({out_channels, in_channels, kernel, kernel}, -bound, bound));
  if (with_bias) bias = make_parameter(rng.uniform_tensor({out_channels}, -bound, bound));
}

void Conv2d::visit_parameters(const std::string& prefix, const ParamVisitor& fn) {
  fn(join_name(prefix, "weight"), weight);
  if (bias.defined()) fn(join_name(prefix, "bias"), bias);
}

Embedding::Embedding(int count, int dim, Rng& rng) { table = make_parameter(rng.normal_tensor({count, dim})); }

void Embedding::visit_parameters(const std::string& prefix, const ParamVisitor& fn) {
  fn(join_name(prefix, "table"), table);
}

GruCell::GruCell(int input_size, int hidden_size, Rng& rng)
    : input(input_size, 3 * hidden_size, rng), hidden(hidden_size, 3 * hidden_size, rng), hidden_(hidden_size) {}

Var GruCell::operator()(const Var& x, const Var& h) const {
  const Var gi = input(x);
  const Var gh = hidden(h);
  const int hs = hidden_;
  const Var r = sigmoid(slice(gi, -1, 0, hs) + slice(gh, -1, 0, hs));
  const Var z = sigmoid(slice(gi, -1, hs, hs) + slice(gh, -1, hs, hs));
  const Var n = tanh(slice(gi, -1, 2 * hs, hs) + r * slice(gh, -1, 2 * hs, hs));
  // (1 - z) * n + z * h
  return n + z * (h - n);
}

void GruCell::visit_parameters(const std::string& prefix, const ParamVisitor& fn) {
  input.visit_parameters(join_name(prefix, "input"), fn);
  hidden.visit_parameters(join_name(prefix, "hidden"), fn);
}

BiGru::BiGru(int input_size, int hidden_size, Rng& rng)
    : forward_cell(input_size, hidden_size, rng), backward_cell(input_size, hidden_size, rng) {}

std::vector<Var> BiGru::operator()(const std::vector<Var>& steps) const {
  MERO_CHECK(!steps.empty(), "BiGru over an empty sequence");
  const int batch = steps[0].dim(0);
  const int hs = forward_cell.hidden_size();
  const std::size_t len = steps.size();
  std::vector<Var> fwd(len), bwd(len);
  Var h = constant(Tensor({batch, hs}));
  for (std::size_t t = 0; t < len; ++t) {
    h = forward_cell(steps[t], h);
    fwd[t] = h;
  }
  h = constant(Tensor({batch, hs}));
  for (std::size_t t = len; t-- > 0;) {
    h = backward_cell(steps[t], h);
    bwd[t] = h;
  }
  std::vector<Var> out(len);
  for (std::size_t t = 0; t < len; ++t) out[t] = concat({fwd[t], bwd[t]}, -1);
  return out;
}

void BiGru::visit_parameters(const std::string& prefix, const ParamVisitor& fn) {
  forward_cell.visit_parameters(join_name(prefix, "forward"), fn);
  backward_cell.visit_parameters(join_name(prefix, "backward"), fn);
}

}  // namespace mero::nn
