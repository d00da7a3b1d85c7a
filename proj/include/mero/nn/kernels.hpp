#pragma once

#include <cstddef>

#include "mero/nn/tensor.hpp"

// OpenMP-parallel compute kernels. Every kernel has a serial counterpart in
// reference.hpp; the unit tests and the kernel benchmark compare the two.
// Each output element is accumulated in a fixed order independent of the
// thread count, so results are bitwise reproducible across OMP_NUM_THREADS.
namespace mero::nn::kernels {

// Loops shorter than this run serially.
inline constexpr std::size_t kParallelGrain = 1 << 14;

// C = op(A) * op(B) + beta * C for row-major operands, where op transposes
// when the matching flag is set. beta must be 0 or 1.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const double* a, int lda, const double* b, int ldb,
          double beta, double* c, int ldc);

struct ConvGeometry {
  int channels = 0;
  int height = 0;
  int width = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  int out_h() const { return (height + 2 * pad - kernel) / stride + 1; }
  int out_w() const { return (width + 2 * pad - kernel) / stride + 1; }
  std::size_t col_rows() const { return static_cast<std::size_t>(channels) * kernel * kernel; }
  std::size_t col_cols() const { return static_cast<std::size_t>(out_h()) * out_w(); }
};

// cols is (C*k*k) x (Ho*Wo); zero padding outside the image.
void im2col(const double* image, const ConvGeometry& g, double* cols);
// Scatter-adds cols back into image (which must be pre-initialised).
void col2im(const double* cols, const ConvGeometry& g, double* image);

// x: N,Cin,H,W   w: Cout,Cin,k,k   bias: Cout or empty   -> y: N,Cout,Ho,Wo
Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad);
// Accumulates into whichever of dx/dw/db are non-null (pre-sized).
void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, int stride, int pad, Tensor* dx, Tensor* dw,
                     Tensor* db);

}  // namespace mero::nn::kernels
