#pragma once

#include "mero/nn/tensor.hpp"

// Straightforward serial implementations kept as the ground truth for the
// parallel kernels. Slow by construction; not used on any production path.
namespace mero::nn::reference {

void gemm(bool trans_a, bool trans_b, int m, int n, int k, const double* a, int lda, const double* b, int ldb,
          double beta, double* c, int ldc);

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad);
void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, int stride, int pad, Tensor* dx, Tensor* dw,
                     Tensor* db);

}  // namespace mero::nn::reference
