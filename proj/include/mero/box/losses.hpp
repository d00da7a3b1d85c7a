#pragma once

#include "mero/nn/ops.hpp"

// Reconstruction terms of the layout objective and the Gaussian KL shared by
// both VAEs. Every function returns the batch mean of a per-object value.
namespace mero::box {

struct Posterior {
  nn::Var mu;       // [B, d]
  nn::Var log_var;  // [B, d], clamped to [-10, 10]
};

inline constexpr double kProbClamp = 1e-7;
inline constexpr double kIouFloor = 1e-6;

// z = mu + exp(log_var / 2) * noise
nn::Var reparameterize(const Posterior& post, const nn::Tensor& noise);

// 0.5 * sum(exp(log_var) + mu^2 - 1 - log_var) over the latent axis.
nn::Var kl_diag_gaussian(const Posterior& post);

// probs, target: [B, p]. Mean Bernoulli NLL over the p slots.
nn::Var loss_presence(const nn::Var& probs, const nn::Tensor& target);

// pred, gt: [B, p, 4] corner boxes; present: [B, p] 0/1. Only present slots
// contribute, yet the sums are divided by p and p(p-1) as written:
//   sum_i (MSE_i - ln max(IoU_i, 1e-6)) / p
//   + sum_{m != n} (|c_m - c_n|_pred - |c_m - c_n|_gt)^2 / (p(p-1))
// MSE_i averages the four coordinates; c are box centres.
nn::Var loss_box(const nn::Var& pred, const nn::Tensor& gt, const nn::Tensor& present);

// probs, target: [B, p, p]. Mean elementwise BCE over all p^2 entries.
nn::Var loss_adjacency(const nn::Var& probs, const nn::Tensor& target);

// Per-slot -ln max(IoU, 1e-6) as [B, p]; exposed for tests and metrics.
nn::Var iou_term(const nn::Var& pred, const nn::Tensor& gt);

}  // namespace mero::box
