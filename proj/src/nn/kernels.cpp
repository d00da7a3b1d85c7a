#include "mero/nn/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cstring>
#include <vector>

#include "mero/error.hpp"

namespace mero::nn::kernels {
namespace {

// Register block and cache block sizes tuned for AVX-512 / AVX2 doubles.
constexpr int kMr = 6;
constexpr int kNr = 16;
constexpr int kKc = 256;
constexpr int kMc = 96;
constexpr int kNc = 2048;

inline void micro_kernel(int kc, const double* __restrict pa, const double* __restrict pb, double* __restrict c,
                         int ldc, int mr, int nr) {
  double acc[kMr][kNr] = {};
  for (int p = 0; p < kc; ++p) {
    const double* bp = pb + p * kNr;
    const double* ap = pa + p * kMr;
    for (int i = 0; i < kMr; ++i) {
      const double av = ap[i];
#pragma omp simd
      for (int j = 0; j < kNr; ++j) acc[i][j] += av * bp[j];
    }
  }
  if (mr == kMr && nr == kNr) {
    for (int i = 0; i < kMr; ++i) {
#pragma omp simd
      for (int j = 0; j < kNr; ++j) c[i * ldc + j] += acc[i][j];
    }
  } else {
    for (int i = 0; i < mr; ++i)
      for (int j = 0; j < nr; ++j) c[i * ldc + j] += acc[i][j];
  }
}

// Packs an mc x kc block of op(A) into kMr-row panels, zero padded.
void pack_a(bool trans, const double* a, int lda, int i0, int p0, int mc, int kc, double* dst) {
  for (int ir = 0; ir < mc; ir += kMr) {
    const int mr = std::min(kMr, mc - ir);
    double* out = dst + static_cast<std::size_t>(ir) * kc;
    for (int p = 0; p < kc; ++p) {
      for (int i = 0; i < kMr; ++i) {
        double v = 0.0;
        if (i < mr) {
          const int row = i0 + ir + i;
          const int col = p0 + p;
          v = trans ? a[static_cast<std::size_t>(col) * lda + row] : a[static_cast<std::size_t>(row) * lda + col];
        }
        out[p * kMr + i] = v;
      }
    }
  }
}

// Packs a kc x nc block of op(B) into kNr-column panels, zero padded.
void pack_b(bool trans, const double* b, int ldb, int p0, int j0, int kc, int nc, double* dst) {
  const int panels = (nc + kNr - 1) / kNr;
#pragma omp parallel for if (static_cast<std::size_t>(kc) * nc > kParallelGrain) schedule(static)
  for (int jp = 0; jp < panels; ++jp) {
    const int jr = jp * kNr;
    const int nr = std::min(kNr, nc - jr);
    double* out = dst + static_cast<std::size_t>(jr) * kc;
    for (int p = 0; p < kc; ++p) {
      const int row = p0 + p;
      if (!trans && nr == kNr) {
        std::memcpy(out + p * kNr, b + static_cast<std::size_t>(row) * ldb + j0 + jr, sizeof(double) * kNr);
        continue;
      }
      for (int j = 0; j < kNr; ++j) {
        double v = 0.0;
        if (j < nr) {
          const int col = j0 + jr + j;
          v = trans ? b[static_cast<std::size_t>(col) * ldb + row] : b[static_cast<std::size_t>(row) * ldb + col];
        }
        out[p * kNr + j] = v;
      }
    }
  }
}

}  // namespace

void gemm(bool trans_a, bool trans_b, int m, int n, int k, const double* a, int lda, const double* b, int ldb,
          double beta, double* c, int ldc) {
  MERO_CHECK(beta == 0.0 || beta == 1.0, "gemm supports beta in {0,1}");
  if (m <= 0 || n <= 0) return;
  if (beta == 0.0) {
    for (int i = 0; i < m; ++i) std::fill_n(c + static_cast<std::size_t>(i) * ldc, n, 0.0);
  }
  if (k <= 0) return;

  static thread_local std::vector<double> packed_a;
  static thread_local std::vector<double> packed_b;
  packed_a.resize(static_cast<std::size_t>(kMc + kMr) * kKc);
  packed_b.resize(static_cast<std::size_t>(kNc + kNr) * kKc);

  for (int jc = 0; jc < n; jc += kNc) {
    const int nc = std::min(kNc, n - jc);
    for (int pc = 0; pc < k; pc += kKc) {
      const int kc = std::min(kKc, k - pc);
      pack_b(trans_b, b, ldb, pc, jc, kc, nc, packed_b.data());
      for (int ic = 0; ic < m; ic += kMc) {
        const int mc = std::min(kMc, m - ic);
        pack_a(trans_a, a, lda, ic, pc, mc, kc, packed_a.data());
        const double* pa = packed_a.data();
        const double* pb = packed_b.data();
        const int panels = (nc + kNr - 1) / kNr;
#pragma omp parallel for if (static_cast<std::size_t>(mc) * nc * kc > kParallelGrain * 8) schedule(static)
        for (int jp = 0; jp < panels; ++jp) {
          const int jr = jp * kNr;
          const int nr = std::min(kNr, nc - jr);
          for (int ir = 0; ir < mc; ir += kMr) {
            const int mr = std::min(kMr, mc - ir);
            micro_kernel(kc, pa + static_cast<std::size_t>(ir) * kc, pb + static_cast<std::size_t>(jr) * kc,
                         c + static_cast<std::size_t>(ic + ir) * ldc + jc + jr, ldc, mr, nr);
          }
        }
      }
    }
  }
}

void im2col(const double* image, const ConvGeometry& g, double* cols) {
  const int ho = g.out_h();
  const int wo = g.out_w();
  const int kk = g.kernel * g.kernel;
  const std::size_t plane = static_cast<std::size_t>(ho) * wo;
#pragma omp parallel for if (g.col_rows() * plane > kParallelGrain) schedule(static)
  for (int c = 0; c < g.channels; ++c) {
    const double* src = image + static_cast<std::size_t>(c) * g.height * g.width;
    for (int ki = 0; ki < g.kernel; ++ki) {
      for (int kj = 0; kj < g.kernel; ++kj) {
        double* dst = cols + (static_cast<std::size_t>(c) * kk + ki * g.kernel + kj) * plane;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ki;
          double* row = dst + static_cast<std::size_t>(oy) * wo;
          if (iy < 0 || iy >= g.height) {
            std::fill_n(row, wo, 0.0);
            continue;
          }
          const double* srow = src + static_cast<std::size_t>(iy) * g.width;
          if (g.stride == 1) {
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox - g.pad + kj;
              row[ox] = (ix >= 0 && ix < g.width) ? srow[ix] : 0.0;
            }
          } else {
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * g.stride - g.pad + kj;
              row[ox] = (ix >= 0 && ix < g.width) ? srow[ix] : 0.0;
            }
          }
        }
      }
    }
  }
}

void col2im(const double* cols, const ConvGeometry& g, double* image) {
  const int ho = g.out_h();
  const int wo = g.out_w();
  const int kk = g.kernel * g.kernel;
  const std::size_t plane = static_cast<std::size_t>(ho) * wo;
#pragma omp parallel for if (g.col_rows() * plane > kParallelGrain) schedule(static)
  for (int c = 0; c < g.channels; ++c) {
    double* dst = image + static_cast<std::size_t>(c) * g.height * g.width;
    for (int ki = 0; ki < g.kernel; ++ki) {
      for (int kj = 0; kj < g.kernel; ++kj) {
        const double* src = cols + (static_cast<std::size_t>(c) * kk + ki * g.kernel + kj) * plane;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ki;
          if (iy < 0 || iy >= g.height) continue;
          double* drow = dst + static_cast<std::size_t>(iy) * g.width;
          const double* srow = src + static_cast<std::size_t>(oy) * wo;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kj;
            if (ix >= 0 && ix < g.width) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

namespace {

ConvGeometry geometry_for(const Tensor& x, const Tensor& w, int stride, int pad) {
  MERO_CHECK(x.rank() == 4 && w.rank() == 4, "conv2d expects NCHW input and OIkk weights");
  MERO_CHECK(x.dim(1) == w.dim(1), "conv2d channel mismatch: input " + shape_str(x.shape()) + " weight " +
                                       shape_str(w.shape()));
  MERO_CHECK(w.dim(2) == w.dim(3), "conv2d expects square kernels");
  ConvGeometry g{x.dim(1), x.dim(2), x.dim(3), w.dim(2), stride, pad};
  MERO_CHECK(g.out_h() > 0 && g.out_w() > 0, "conv2d output would be empty for input " + shape_str(x.shape()));
  return g;
}

bool is_pointwise(const ConvGeometry& g) { return g.kernel == 1 && g.stride == 1 && g.pad == 0; }

}  // namespace

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad) {
  const ConvGeometry g = geometry_for(x, w, stride, pad);
  const int batch = x.dim(0);
  const int cout = w.dim(0);
  const int ho = g.out_h();
  const int wo = g.out_w();
  const std::size_t plane = g.col_cols();
  Tensor y({batch, cout, ho, wo});
  std::vector<double> cols(is_pointwise(g) ? 0 : g.col_rows() * plane);
  const std::size_t in_stride = static_cast<std::size_t>(g.channels) * g.height * g.width;
  for (int n = 0; n < batch; ++n) {
    const double* xin = x.data() + n * in_stride;
    const double* colp = xin;
    if (!is_pointwise(g)) {
      im2col(xin, g, cols.data());
      colp = cols.data();
    }
    double* yout = y.data() + static_cast<std::size_t>(n) * cout * plane;
    gemm(false, false, cout, static_cast<int>(plane), static_cast<int>(g.col_rows()), w.data(),
         static_cast<int>(g.col_rows()), colp, static_cast<int>(plane), 0.0, yout, static_cast<int>(plane));
    if (!bias.empty()) {
      for (int o = 0; o < cout; ++o) {
        const double bv = bias[o];
        double* row = yout + static_cast<std::size_t>(o) * plane;
#pragma omp simd
        for (std::size_t i = 0; i < plane; ++i) row[i] += bv;
      }
    }
  }
  return y;
}

void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, int stride, int pad, Tensor* dx, Tensor* dw,
                     Tensor* db) {
  const ConvGeometry g = geometry_for(x, w, stride, pad);
  const int batch = x.dim(0);
  const int cout = w.dim(0);
  const std::size_t plane = g.col_cols();
  const int rows = static_cast<int>(g.col_rows());
  const std::size_t in_stride = static_cast<std::size_t>(g.channels) * g.height * g.width;
  std::vector<double> cols(is_pointwise(g) ? 0 : g.col_rows() * plane);
  std::vector<double> dcols(dx && !is_pointwise(g) ? g.col_rows() * plane : 0);
  for (int n = 0; n < batch; ++n) {
    const double* dyn = dy.data() + static_cast<std::size_t>(n) * cout * plane;
    if (dw) {
      const double* colp = x.data() + n * in_stride;
      if (!is_pointwise(g)) {
        im2col(colp, g, cols.data());
        colp = cols.data();
      }
      gemm(false, true, cout, rows, static_cast<int>(plane), dyn, static_cast<int>(plane), colp,
           static_cast<int>(plane), 1.0, dw->data(), rows);
    }
    if (dx) {
      double* dxn = dx->data() + n * in_stride;
      if (is_pointwise(g)) {
        gemm(true, false, rows, static_cast<int>(plane), cout, w.data(), rows, dyn, static_cast<int>(plane), 1.0, dxn,
             static_cast<int>(plane));
      } else {
        gemm(true, false, rows, static_cast<int>(plane), cout, w.data(), rows, dyn, static_cast<int>(plane), 0.0,
             dcols.data(), static_cast<int>(plane));
        col2im(dcols.data(), g, dxn);
      }
    }
    if (db) {
      for (int o = 0; o < cout; ++o) {
        const double* row = dyn + static_cast<std::size_t>(o) * plane;
        double s = 0.0;
        for (std::size_t i = 0; i < plane; ++i) s += row[i];
        (*db)[o] += s;
      }
    }
  }
}

}  // namespace mero::nn::kernels
