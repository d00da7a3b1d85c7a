#include "mero/box/losses.hpp"

#include <cmath>

#include "mero/error.hpp"

namespace mero::box {

using nn::Tensor;
using nn::Var;

Var reparameterize(const Posterior& post, const Tensor& noise) {
  MERO_CHECK(noise.shape() == post.mu.shape(), "reparameterize: noise shape differs from mu");
  return post.mu + nn::exp(post.log_var * 0.5) * nn::constant(noise);
}

Var kl_diag_gaussian(const Posterior& post) {
  const Var per_dim = nn::exp(post.log_var) + nn::square(post.mu) + (-1.0) - post.log_var;
  return nn::mean(nn::sum_axis(per_dim, -1 + static_cast<int>(post.mu.shape().size()))) * 0.5;
}

Var loss_presence(const Var& probs, const Tensor& target) {
  MERO_CHECK(probs.shape() == target.shape() && probs.shape().size() == 2, "loss_presence: expects matching [B, p]");
  return nn::mean(nn::binary_cross_entropy(probs, target, kProbClamp));
}

Var loss_adjacency(const Var& probs, const Tensor& target) {
  MERO_CHECK(probs.shape() == target.shape() && probs.shape().size() == 3,
             "loss_adjacency: expects matching [B, p, p]");
  return nn::mean(nn::binary_cross_entropy(probs, target, kProbClamp));
}

namespace {

Var coord(const Var& boxes, int k) {
  // [B, p, 4] -> [B, p]
  const int b = boxes.dim(0), p = boxes.dim(1);
  return nn::reshape(nn::slice(boxes, 2, k, 1), {b, p});
}

Tensor coord(const Tensor& boxes, int k) {
  const int b = boxes.dim(0), p = boxes.dim(1);
  Tensor out({b, p});
  for (int i = 0; i < b * p; ++i) out[i] = boxes[static_cast<std::size_t>(i) * 4 + k];
  return out;
}

}  // namespace

Var iou_term(const Var& pred, const Tensor& gt) {
  MERO_CHECK(pred.shape() == gt.shape() && pred.shape().size() == 3 && pred.dim(2) == 4,
             "iou: expects matching [B, p, 4]");
  const Var px0 = coord(pred, 0), py0 = coord(pred, 1), px1 = coord(pred, 2), py1 = coord(pred, 3);
  const Var gx0 = nn::constant(coord(gt, 0)), gy0 = nn::constant(coord(gt, 1));
  const Var gx1 = nn::constant(coord(gt, 2)), gy1 = nn::constant(coord(gt, 3));
  const Var iw = nn::relu(nn::minimum(px1, gx1) - nn::maximum(px0, gx0));
  const Var ih = nn::relu(nn::minimum(py1, gy1) - nn::maximum(py0, gy0));
  const Var inter = iw * ih;
  const Var area_pred = nn::relu(px1 - px0) * nn::relu(py1 - py0);
  const Var area_gt = nn::relu(gx1 - gx0) * nn::relu(gy1 - gy0);
  // A floor rather than an additive epsilon keeps IoU exactly 1 for equal boxes.
  const Var uni = nn::maximum(area_pred + area_gt - inter, nn::constant(Tensor(inter.shape(), 1e-12)));
  return -nn::log(nn::maximum(inter / uni, nn::constant(Tensor(inter.shape(), kIouFloor))));
}

Var loss_box(const Var& pred, const Tensor& gt, const Tensor& present) {
  MERO_CHECK(pred.shape() == gt.shape() && pred.shape().size() == 3 && pred.dim(2) == 4,
             "loss_box: expects matching [B, p, 4]");
  const int b = pred.dim(0), p = pred.dim(1);
  MERO_CHECK(present.shape() == (nn::Shape{b, p}), "loss_box: present must be [B, p]");
  const Var mask = nn::constant(present);

  const Var mse = nn::sum_axis(nn::square(pred - nn::constant(gt)), 2) * 0.25;
  Var total = nn::sum((mse + iou_term(pred, gt)) * mask) * (1.0 / p);

  if (p > 1) {
    // Pairwise centre distances; the 1e-12 keeps sqrt differentiable at 0.
    auto centres = [&](const Var& boxes) {
      const Var cx = (coord(boxes, 0) + coord(boxes, 2)) * 0.5;
      const Var cy = (coord(boxes, 1) + coord(boxes, 3)) * 0.5;
      return nn::concat({nn::reshape(cx, {b, p, 1}), nn::reshape(cy, {b, p, 1})}, 2);
    };
    auto distances = [&](const Var& c) {
      const Var diff = nn::expand(c, 2, p) - nn::expand(c, 1, p);  // [B, p, p, 2]
      return nn::sqrt(nn::sum_axis(nn::square(diff), 3) + 1e-12);
    };
    Tensor pair_mask({b, p, p});
    for (int i = 0; i < b; ++i)
      for (int m = 0; m < p; ++m)
        for (int n = 0; n < p; ++n)
          if (m != n && present.at(i, m) != 0.0 && present.at(i, n) != 0.0)
            pair_mask[(static_cast<std::size_t>(i) * p + m) * p + n] = 1.0;
    Var d_gt;
    {
      nn::NoGradGuard guard;
      d_gt = nn::detach(distances(centres(nn::constant(gt))));
    }
    const Var d_pred = distances(centres(pred));
    total = total + nn::sum(nn::square(d_pred - d_gt) * nn::constant(pair_mask)) * (1.0 / (p * (p - 1.0)));
  }
  return total * (1.0 / b);
}

}  // namespace mero::box
