#include "mero/nn/reference.hpp"

#include "mero/error.hpp"

namespace mero::nn::reference {

void gemm(bool trans_a, bool trans_b, int m, int n, int k, const double* a, int lda, const double* b, int ldb,
          double beta, double* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int p = 0; p < k; ++p) {
        const double av = trans_a ? a[p * lda + i] : a[i * lda + p];
        const double bv = trans_b ? b[j * ldb + p] : b[p * ldb + j];
        s += av * bv;
      }
      c[i * ldc + j] = beta * c[i * ldc + j] + s;
    }
  }
}

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad) {
  MERO_CHECK(x.rank() == 4 && w.rank() == 4 && x.dim(1) == w.dim(1), "reference conv2d shape mismatch");
  const int batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int cout = w.dim(0), k = w.dim(2);
  const int ho = (h + 2 * pad - k) / stride + 1;
  const int wo = (wd + 2 * pad - k) / stride + 1;
  Tensor y({batch, cout, ho, wo});
  for (int n = 0; n < batch; ++n)
    for (int o = 0; o < cout; ++o)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          double s = bias.empty() ? 0.0 : bias[o];
          for (int c = 0; c < cin; ++c)
            for (int ki = 0; ki < k; ++ki)
              for (int kj = 0; kj < k; ++kj) {
                const int iy = oy * stride - pad + ki;
                const int ix = ox * stride - pad + kj;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                s += x.at(n, c, iy, ix) * w.at(o, c, ki, kj);
              }
          y.at(n, o, oy, ox) = s;
        }
  return y;
}

void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, int stride, int pad, Tensor* dx, Tensor* dw,
                     Tensor* db) {
  const int batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int cout = w.dim(0), k = w.dim(2);
  const int ho = dy.dim(2), wo = dy.dim(3);
  for (int n = 0; n < batch; ++n)
    for (int o = 0; o < cout; ++o)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          const double g = dy.at(n, o, oy, ox);
          if (db) (*db)[o] += g;
          for (int c = 0; c < cin; ++c)
            for (int ki = 0; ki < k; ++ki)
              for (int kj = 0; kj < k; ++kj) {
                const int iy = oy * stride - pad + ki;
                const int ix = ox * stride - pad + kj;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                if (dw) dw->at(o, c, ki, kj) += g * x.at(n, c, iy, ix);
                if (dx) dx->at(n, c, iy, ix) += g * w.at(o, c, ki, kj);
              }
        }
}

}  // namespace mero::nn::reference
