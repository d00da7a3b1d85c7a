#pragma once

#include <vector>

#include "mero/nn/autograd.hpp"

// Differentiable operations on Var. Binary elementwise ops require equal
// shapes; broadcasting is explicit (expand, broadcast_spatial, linear bias).
namespace mero::nn {

Var constant(Tensor t);
Var detach(const Var& a);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var add_scalar(const Var& a, double s);
Var scale(const Var& a, double s);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }
inline Var operator+(const Var& a, double s) { return add_scalar(a, s); }

Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope = 0.2);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var sqrt(const Var& a);
Var abs(const Var& a);
Var square(const Var& a);
// Values outside [lo, hi] are clipped and pass no gradient.
Var clamp(const Var& a, double lo, double hi);
Var minimum(const Var& a, const Var& b);
Var maximum(const Var& a, const Var& b);

// Full reductions return shape [1].
Var sum(const Var& a);
Var mean(const Var& a);
// Reduce one axis away.
Var sum_axis(const Var& a, int axis);
Var mean_axis(const Var& a, int axis);

Var reshape(const Var& a, Shape shape);
Var concat(const std::vector<Var>& parts, int axis);
Var slice(const Var& a, int axis, int start, int length);
// Swaps the last two axes.
Var transpose(const Var& a);
// Inserts a new axis of extent `times` at `axis`, replicating values.
Var expand(const Var& a, int axis, int times);
// [N,C] -> [N,C,H,W], constant over the spatial plane.
Var broadcast_spatial(const Var& a, int height, int width);

// [..,M,K] x [K,N] (shared right operand) or [B,M,K] x [B,K,N].
Var matmul(const Var& a, const Var& b);
// x[..,in] * w[in,out] + bias[out]; bias may be undefined.
Var linear(const Var& x, const Var& w, const Var& bias);

Var conv2d(const Var& x, const Var& w, const Var& bias, int stride, int pad);
Var upsample_nearest(const Var& x, int factor);
Var avg_pool(const Var& x, int factor);
// Per-sample, per-channel normalisation without affine parameters.
Var instance_norm(const Var& x, double eps = 1e-5);
// normed * (1 + gamma) + beta
Var spade_modulate(const Var& normed, const Var& gamma, const Var& beta);

// Elementwise Bernoulli negative log-likelihood with probabilities clamped
// to [eps, 1 - eps]; target is a constant of the same shape.
Var binary_cross_entropy(const Var& prob, const Tensor& target, double eps = 1e-7);
Var l1_loss(const Var& a, const Var& b);

// Nearest-neighbour resize of a constant NCHW tensor.
Tensor resize_nearest(const Tensor& x, int height, int width);

}  // namespace mero::nn
