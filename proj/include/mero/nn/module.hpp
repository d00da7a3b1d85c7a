#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mero/nn/ops.hpp"
#include "mero/nn/rng.hpp"

namespace mero::nn {

using ParamVisitor = std::function<void(const std::string& name, Var& param)>;

// A module exposes its trainable leaves under stable dotted names; those
// names are the checkpoint keys. Copying a module shares its parameters.
class Module {
 public:
  virtual ~Module() = default;
  virtual void visit_parameters(const std::string& prefix, const ParamVisitor& fn) = 0;

  std::vector<std::pair<std::string, Var>> named_parameters();
  std::vector<Var> parameters();
  std::size_t parameter_count();
  void zero_grad();
};

inline std::string join_name(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

Var make_parameter(Tensor init);

class Linear : public Module {
 public:
  Linear() = default;
  Linear(int in_features, int out_features, Rng& rng, bool bias = true);

  Var operator()(const Var& x) const { return linear(x, weight, bias); }
  void visit_parameters(const std::string& prefix, const ParamVisitor& fn) override;

  Var weight;  // [in, out]
  Var bias;    // [out]
};

class Conv2d : public Module {
 public:
  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad, Rng& rng, bool bias = true);

  Var operator()(const Var& x) const { return conv2d(x, weight, bias, stride_, pad_); }
  void visit_parameters(const std::string& prefix, const ParamVisitor& fn) override;

  Var weight;  // [out, in, k, k]
  Var bias;    // [out]

 private:
  int stride_ = 1;
  int pad_ = 0;
};

// Rows of the table are selected by multiplying with a one-hot matrix.
class Embedding : public Module {
 public:
  Embedding() = default;
  Embedding(int count, int dim, Rng& rng);

  Var operator()(const Var& one_hot) const { return matmul(one_hot, table); }
  void visit_parameters(const std::string& prefix, const ParamVisitor& fn) override;

  Var table;  // [count, dim]
};

// Gated recurrent unit cell, gate order (reset, update, candidate).
class GruCell : public Module {
 public:
  GruCell() = default;
  GruCell(int input_size, int hidden_size, Rng& rng);

  Var operator()(const Var& x, const Var& h) const;
  int hidden_size() const { return hidden_; }
  void visit_parameters(const std::string& prefix, const ParamVisitor& fn) override;

  Linear input;   // in -> 3h
  Linear hidden;  // h -> 3h

 private:
  int hidden_ = 0;
};

// Bidirectional GRU over a fixed-length sequence of [B, in] steps. Each output
// step is concat(forward_state_t, backward_state_t) with width 2 * hidden.
class BiGru : public Module {
 public:
  BiGru() = default;
  BiGru(int input_size, int hidden_size, Rng& rng);

  std::vector<Var> operator()(const std::vector<Var>& steps) const;
  void visit_parameters(const std::string& prefix, const ParamVisitor& fn) override;

  GruCell forward_cell;
  GruCell backward_cell;
};

}  // namespace mero::nn
