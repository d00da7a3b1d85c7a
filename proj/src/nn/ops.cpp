#include "mero/nn/ops.hpp"

#include <algorithm>
#include <cmath>

#include "mero/error.hpp"
#include "mero/nn/kernels.hpp"

namespace mero::nn {

using kernels::kParallelGrain;

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  MERO_CHECK(a.shape() == b.shape(),
             std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

inline Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }
inline bool wants_grad(Node& self, std::size_t i) { return self.parents[i] && self.parents[i]->requires_grad; }

// Elementwise unary op; deriv(x, y) returns dy/dx.
template <class F, class D>
Var unary(const Var& a, F f, D deriv) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  const std::size_t n = x.size();
  const double* xs = x.data();
  double* ys = y.data();
#pragma omp parallel for if (n > kParallelGrain) schedule(static)
  for (std::size_t i = 0; i < n; ++i) ys[i] = f(xs[i]);
  return make_op(std::move(y), {a}, [deriv](Node& self) {
    if (!wants_grad(self, 0)) return;
    Node& pa = parent(self, 0);
    Tensor& g = pa.grad_buffer();
    const std::size_t n = g.size();
    const double* xs = pa.value.data();
    const double* ys = self.value.data();
    const double* gy = self.grad.data();
    double* gx = g.data();
#pragma omp parallel for if (n > kParallelGrain) schedule(static)
    for (std::size_t i = 0; i < n; ++i) gx[i] += gy[i] * deriv(xs[i], ys[i]);
  });
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, int axis) {
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= static_cast<std::size_t>(shape[i]);
  s.extent = static_cast<std::size_t>(shape[axis]);
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) s.inner *= static_cast<std::size_t>(shape[i]);
  return s;
}

int normalize_axis(int axis, int rank) {
  const int a = axis < 0 ? axis + rank : axis;
  MERO_CHECK(a >= 0 && a < rank, "axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  return a;
}

}  // namespace

Var constant(Tensor t) { return Var(std::move(t), false); }

Var detach(const Var& a) { return Var(a.value(), false); }

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor y = a.value();
  const std::size_t n = y.size();
  const double* bs = b.value().data();
  double* ys = y.data();
#pragma omp parallel for if (n > kParallelGrain) schedule(static)
  for (std::size_t i = 0; i < n; ++i) ys[i] += bs[i];
  return make_op(std::move(y), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!wants_grad(self, k)) continue;
      Tensor& g = parent(self, k).grad_buffer();
      const std::size_t n = g.size();
      const double* gy = self.grad.data();
      double* gx = g.data();
#pragma omp parallel for if (n > kParallelGrain) schedule(static)
      for (std::size_t i = 0; i < n; ++i) gx[i] += gy[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor y = a.value();
  const std::size_t n = y.size();
  const double* bs = b.value().data();
  double* ys = y.data();
#pragma omp parallel for if (n > kParallelGrain) schedule(static)
  for (std::size_t i = 0; i < n; ++i) ys[i] -= bs[i];
  return make_op(std::move(y), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!wants_grad(self, k)) continue;
      const double sign = k == 0 ? 1.0 : -1.0;
      Tensor& g = parent(self, k).grad_buffer();
      const std::size_t n = g.size();
      const double* gy = self.grad.data();
      double* gx = g.data();
#pragma omp parallel for if (n > kParallelGrain) schedule(static)
      for (std::size_t i = 0; i < n; ++i) gx[i] += sign * gy[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor y = a.value();
  const std::size_t n = y.size();
  const double* bs = b.value().data();
  double* ys = y.data();
#pragma omp parallel for if (n > kParallelGrain) schedule(static)
  for (std::size_t i = 0; i < n; ++i) ys[i] *= bs[i];
  return make_op(std::move(y), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!wants_grad(self, k)) continue;
      Tensor& g = parent(self, k).grad_buffer();
      const double* other = parent(self, 1 - k).value.data();
      const std::size_t n = g.size();
      const double* gy = self.grad.data();
      double* gx = g.data();
#pragma omp parallel for if (n > kParallelGrain) schedule(static)
      for (std::size_t i = 0; i < n; ++i) gx[i] += gy[i] * other[i];
    }
  });
}

Var div(const Var& a, const Var& b) {
  require_same_shape(a, b, "div");
  Tensor y = a.value();
  const std::size_t n = y.size();
  const double* bs = b.value().data();
  for (std::size_t i = 0; i < n; ++i) y[i] /= bs[i];
  return make_op(std::move(y), {a, b}, [](Node& self) {
    const double* bs = parent(self, 1).value.data();
    const double* gy = self.grad.data();
    const std::size_t n = self.grad.size();
    if (wants_grad(self, 0)) {
      double* gx = parent(self, 0).grad_buffer().data();
      for (std::size_t i = 0; i < n; ++i) gx[i] += gy[i] / bs[i];
    }
    if (wants_grad(self, 1)) {
      const double* ys = self.value.data();
      double* gx = parent(self, 1).grad_buffer().data();
      for (std::size_t i = 0; i < n; ++i) gx[i] -= gy[i] * ys[i] / bs[i];
    }
  });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var add_scalar(const Var& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var scale(const Var& a, double s) {
  return unary(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Var relu(const Var& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& a, double slope) {
  return unary(
      a, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Var sigmoid(const Var& a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(const Var& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var exp(const Var& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var sqrt(const Var& a) {
  return unary(a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Var abs(const Var& a) {
  return unary(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var clamp(const Var& a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

namespace {

Var select_binary(const Var& a, const Var& b, bool take_min) {
  const std::size_t n = a.value().size();
  Tensor y(a.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const double x0 = a.value()[i], x1 = b.value()[i];
    y[i] = take_min ? std::min(x0, x1) : std::max(x0, x1);
  }
  return make_op(std::move(y), {a, b}, [take_min](Node& self) {
    const Tensor& av = parent(self, 0).value;
    const Tensor& bv = parent(self, 1).value;
    const std::size_t n = self.grad.size();
    Tensor* ga = wants_grad(self, 0) ? &parent(self, 0).grad_buffer() : nullptr;
    Tensor* gb = wants_grad(self, 1) ? &parent(self, 1).grad_buffer() : nullptr;
    for (std::size_t i = 0; i < n; ++i) {
      const bool first = take_min ? av[i] <= bv[i] : av[i] >= bv[i];
      if (first) {
        if (ga) (*ga)[i] += self.grad[i];
      } else if (gb) {
        (*gb)[i] += self.grad[i];
      }
    }
  });
}

}  // namespace

Var minimum(const Var& a, const Var& b) {
  require_same_shape(a, b, "minimum");
  return select_binary(a, b, true);
}

Var maximum(const Var& a, const Var& b) {
  require_same_shape(a, b, "maximum");
  return select_binary(a, b, false);
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().storage()) s += v;
  return make_op(Tensor::scalar(s), {a}, [](Node& self) {
    if (!wants_grad(self, 0)) return;
    Tensor& g = parent(self, 0).grad_buffer();
    const double gy = self.grad[0];
    for (double& v : g.storage()) v += gy;
  });
}

Var mean(const Var& a) {
  const std::size_t n = a.value().size();
  MERO_CHECK(n > 0, "mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var sum_axis(const Var& a, int axis) {
  axis = normalize_axis(axis, a.value().rank());
  const AxisSplit s = split_axis(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + axis);
  if (out_shape.empty()) out_shape = {1};
  Tensor y(out_shape);
  const double* x = a.value().data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t i = 0; i < s.inner; ++i) y[o * s.inner + i] += x[(o * s.extent + e) * s.inner + i];
  return make_op(std::move(y), {a}, [s](Node& self) {
    if (!wants_grad(self, 0)) return;
    Tensor& g = parent(self, 0).grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t e = 0; e < s.extent; ++e)
        for (std::size_t i = 0; i < s.inner; ++i) g[(o * s.extent + e) * s.inner + i] += self.grad[o * s.inner + i];
  });
}

Var mean_axis(const Var& a, int axis) {
  const int ax = normalize_axis(axis, a.value().rank());
  return scale(sum_axis(a, ax), 1.0 / static_cast<double>(a.dim(ax)));
}

Var reshape(const Var& a, Shape shape) {
  Tensor y = a.value().reshaped(std::move(shape));
  return make_op(std::move(y), {a}, [](Node& self) {
    if (!wants_grad(self, 0)) return;
    Tensor& g = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Var concat(const std::vector<Var>& parts, int axis) {
  MERO_CHECK(!parts.empty(), "concat of zero tensors");
  const int rank = parts[0].value().rank();
  axis = normalize_axis(axis, rank);
  Shape out_shape = parts[0].shape();
  int total = 0;
  for (const Var& p : parts) {
    MERO_CHECK(p.value().rank() == rank, "concat rank mismatch");
    for (int d = 0; d < rank; ++d)
      MERO_CHECK(d == axis || p.dim(d) == out_shape[d],
                 "concat shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(out_shape));
    total += p.dim(axis);
  }
  out_shape[axis] = total;
  const AxisSplit os = split_axis(out_shape, axis);
  Tensor y(out_shape);
  std::vector<int> offsets;
  int off = 0;
  for (const Var& p : parts) {
    offsets.push_back(off);
    const AxisSplit ps = split_axis(p.shape(), axis);
    const std::size_t chunk = ps.extent * ps.inner;
    for (std::size_t o = 0; o < ps.outer; ++o)
      std::copy_n(p.value().data() + o * chunk, chunk, y.data() + o * os.extent * os.inner + off * os.inner);
    off += p.dim(axis);
  }
  return make_op(std::move(y), parts, [os, offsets](Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      if (!wants_grad(self, k)) continue;
      Tensor& g = parent(self, k).grad_buffer();
      const std::size_t chunk = g.size() / os.outer;
      for (std::size_t o = 0; o < os.outer; ++o) {
        const double* src = self.grad.data() + o * os.extent * os.inner + offsets[k] * os.inner;
        double* dst = g.data() + o * chunk;
        for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
      }
    }
  });
}

Var slice(const Var& a, int axis, int start, int length) {
  axis = normalize_axis(axis, a.value().rank());
  MERO_CHECK(start >= 0 && length >= 0 && start + length <= a.dim(axis),
             "slice [" + std::to_string(start) + "," + std::to_string(start + length) + ") out of range for " +
                 shape_str(a.shape()));
  const AxisSplit s = split_axis(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape[axis] = length;
  Tensor y(out_shape);
  const std::size_t chunk = static_cast<std::size_t>(length) * s.inner;
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(a.value().data() + o * s.extent * s.inner + start * s.inner, chunk, y.data() + o * chunk);
  return make_op(std::move(y), {a}, [s, start, chunk](Node& self) {
    if (!wants_grad(self, 0)) return;
    Tensor& g = parent(self, 0).grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o) {
      double* dst = g.data() + o * s.extent * s.inner + start * s.inner;
      const double* src = self.grad.data() + o * chunk;
      for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
    }
  });
}

Var transpose(const Var& a) {
  const int rank = a.value().rank();
  MERO_CHECK(rank == 2 || rank == 3, "transpose expects rank 2 or 3");
  const int batch = rank == 3 ? a.dim(0) : 1;
  const int rows = a.dim(-2), cols = a.dim(-1);
  Shape out_shape = a.shape();
  std::swap(out_shape[rank - 1], out_shape[rank - 2]);
  Tensor y(out_shape);
  const std::size_t plane = static_cast<std::size_t>(rows) * cols;
  for (int b = 0; b < batch; ++b)
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) y[b * plane + j * rows + i] = a.value()[b * plane + i * cols + j];
  return make_op(std::move(y), {a}, [batch, rows, cols, plane](Node& self) {
    if (!wants_grad(self, 0)) return;
    Tensor& g = parent(self, 0).grad_buffer();
    for (int b = 0; b < batch; ++b)
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) g[b * plane + i * cols + j] += self.grad[b * plane + j * rows + i];
  });
}

Var expand(const Var& a, int axis, int times) {
  const int rank = a.value().rank();
  MERO_CHECK(axis >= 0 && axis <= rank && times > 0, "expand: bad axis/times");
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(a.dim(i));
  for (int i = axis; i < rank; ++i) inner *= static_cast<std::size_t>(a.dim(i));
  Shape out_shape = a.shape();
  out_shape.insert(out_shape.begin() + axis, times);
  Tensor y(out_shape);
  for (std::size_t o = 0; o < outer; ++o)
    for (int t = 0; t < times; ++t)
      std::copy_n(a.value().data() + o * inner, inner, y.data() + (o * times + t) * inner);
  return make_op(std::move(y), {a}, [outer, inner, times](Node& self) {
    if (!wants_grad(self, 0)) return;
    Tensor& g = parent(self, 0).grad_buffer();
    for (std::size_t o = 0; o < outer; ++o)
      for (int t = 0; t < times; ++t)
        for (std::size_t i = 0; i < inner; ++i) g[o * inner + i] += self.grad[(o * times + t) * inner + i];
  });
}

Var broadcast_spatial(const Var& a, int height, int width) {
  MERO_CHECK(a.value().rank() == 2, "broadcast_spatial expects [N,C]");
  const int n = a.dim(0), c = a.dim(1);
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  Tensor y({n, c, height, width});
  for (int i = 0; i < n * c; ++i) std::fill_n(y.data() + i * plane, plane, a.value()[i]);
  return make_op(std::move(y), {a}, [n, c, plane](Node& self) {
    if (!wants_grad(self, 0)) return;
    Tensor& g = parent(self, 0).grad_buffer();
    for (int i = 0; i < n * c; ++i) {
      double s = 0.0;
      const double* src = self.grad.data() + i * plane;
      for (std::size_t k = 0; k < plane; ++k) s += src[k];
      g[i] += s;
    }
  });
}

Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  MERO_CHECK(av.rank() >= 2 && (bv.rank() == 2 || bv.rank() == 3), "matmul rank mismatch");
  if (bv.rank() == 2) {
    const int k = bv.dim(0), n = bv.dim(1);
    MERO_CHECK(av.dim(-1) == k, "matmul inner dimension mismatch " + shape_str(av.shape()) + " x " +
                                    shape_str(bv.shape()));
    const int m = static_cast<int>(av.size() / static_cast<std::size_t>(k));
    Shape out_shape = av.shape();
    out_shape.back() = n;
    Tensor y(out_shape);
    kernels::gemm(false, false, m, n, k, av.data(), k, bv.data(), n, 0.0, y.data(), n);
    return make_op(std::move(y), {a, b}, [m, n, k](Node& self) {
      const Tensor& av = parent(self, 0).value;
      const Tensor& bv = parent(self, 1).value;
      if (wants_grad(self, 0))
        kernels::gemm(false, true, m, k, n, self.grad.data(), n, bv.data(), n, 1.0,
                      parent(self, 0).grad_buffer().data(), k);
      if (wants_grad(self, 1))
        kernels::gemm(true, false, k, n, m, av.data(), k, self.grad.data(), n, 1.0,
                      parent(self, 1).grad_buffer().data(), n);
    });
  }
  MERO_CHECK(av.rank() == 3 && av.dim(0) == bv.dim(0) && av.dim(2) == bv.dim(1),
             "batched matmul shape mismatch " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
  const int batch = av.dim(0), m = av.dim(1), k = av.dim(2), n = bv.dim(2);
  Tensor y({batch, m, n});
  for (int i = 0; i < batch; ++i)
    kernels::gemm(false, false, m, n, k, av.data() + i * m * k, k, bv.data() + i * k * n, n, 0.0,
                  y.data() + i * m * n, n);
  return make_op(std::move(y), {a, b}, [batch, m, n, k](Node& self) {
    const Tensor& av = parent(self, 0).value;
    const Tensor& bv = parent(self, 1).value;
    for (int i = 0; i < batch; ++i) {
      const double* gy = self.grad.data() + i * m * n;
      if (wants_grad(self, 0))
        kernels::gemm(false, true, m, k, n, gy, n, bv.data() + i * k * n, n, 1.0,
                      parent(self, 0).grad_buffer().data() + i * m * k, k);
      if (wants_grad(self, 1))
        kernels::gemm(true, false, k, n, m, av.data() + i * m * k, k, gy, n, 1.0,
                      parent(self, 1).grad_buffer().data() + i * k * n, n);
    }
  });
}

Var linear(const Var& x, const Var& w, const Var& bias) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  MERO_CHECK(wv.rank() == 2 && xv.dim(-1) == wv.dim(0),
             "linear shape mismatch " + shape_str(xv.shape()) + " x " + shape_str(wv.shape()));
  const int k = wv.dim(0), n = wv.dim(1);
  const int m = static_cast<int>(xv.size() / static_cast<std::size_t>(k));
  Shape out_shape = xv.shape();
  out_shape.back() = n;
  Tensor y(out_shape);
  kernels::gemm(false, false, m, n, k, xv.data(), k, wv.data(), n, 0.0, y.data(), n);
  if (bias.defined()) {
    MERO_CHECK(bias.value().size() == static_cast<std::size_t>(n), "linear bias size mismatch");
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) y[static_cast<std::size_t>(i) * n + j] += bias.value()[j];
  }
  return make_op(std::move(y), {x, w, bias}, [m, n, k](Node& self) {
    const Tensor& xv = parent(self, 0).value;
    const Tensor& wv = parent(self, 1).value;
    if (wants_grad(self, 0))
      kernels::gemm(false, true, m, k, n, self.grad.data(), n, wv.data(), n, 1.0, parent(self, 0).grad_buffer().data(),
                    k);
    if (wants_grad(self, 1))
      kernels::gemm(true, false, k, n, m, xv.data(), k, self.grad.data(), n, 1.0, parent(self, 1).grad_buffer().data(),
                    n);
    if (wants_grad(self, 2)) {
      Tensor& gb = parent(self, 2).grad_buffer();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) gb[j] += self.grad[static_cast<std::size_t>(i) * n + j];
    }
  });
}

Var conv2d(const Var& x, const Var& w, const Var& bias, int stride, int pad) {
  static const Tensor kNoBias;
  Tensor y = kernels::conv2d_forward(x.value(), w.value(), bias.defined() ? bias.value() : kNoBias, stride, pad);
  return make_op(std::move(y), {x, w, bias}, [stride, pad](Node& self) {
    Tensor* dx = wants_grad(self, 0) ? &parent(self, 0).grad_buffer() : nullptr;
    Tensor* dw = wants_grad(self, 1) ? &parent(self, 1).grad_buffer() : nullptr;
    Tensor* db = wants_grad(self, 2) ? &parent(self, 2).grad_buffer() : nullptr;
    kernels::conv2d_backward(parent(self, 0).value, parent(self, 1).value, self.grad, stride, pad, dx, dw, db);
  });
}

Var upsample_nearest(const Var& x, int factor) {
  const Tensor& xv = x.value();
  MERO_CHECK(xv.rank() == 4 && factor >= 1, "upsample_nearest expects NCHW");
  const int planes = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const int ho = h * factor, wo = w * factor;
  Tensor y({xv.dim(0), xv.dim(1), ho, wo});
#pragma omp parallel for if (y.size() > kParallelGrain) schedule(static)
  for (int p = 0; p < planes; ++p) {
    const double* src = xv.data() + static_cast<std::size_t>(p) * h * w;
    double* dst = y.data() + static_cast<std::size_t>(p) * ho * wo;
    for (int i = 0; i < ho; ++i)
      for (int j = 0; j < wo; ++j) dst[i * wo + j] = src[(i / factor) * w + j / factor];
  }
  return make_op(std::move(y), {x}, [planes, h, w, factor](Node& self) {
    if (!wants_grad(self, 0)) return;
    Tensor& g = parent(self, 0).grad_buffer();
    const int ho = h * factor, wo = w * factor;
#pragma omp parallel for if (self.grad.size() > kParallelGrain) schedule(static)
    for (int p = 0; p < planes; ++p) {
      double* dst = g.data() + static_cast<std::size_t>(p) * h * w;
      const double* src = self.grad.data() + static_cast<std::size_t>(p) * ho * wo;
      for (int i = 0; i < ho; ++i)
        for (int j = 0; j < wo; ++j) dst[(i / factor) * w + j / factor] += src[i * wo + j];
    }
  });
}

Var avg_pool(const Var& x, int factor) {
  const Tensor& xv = x.value();
  MERO_CHECK(xv.rank() == 4 && xv.dim(2) % factor == 0 && xv.dim(3) % factor == 0,
             "avg_pool needs NCHW with extents divisible by the factor");
  const int planes = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const int ho = h / factor, wo = w / factor;
  const double inv = 1.0 / (factor * factor);
  Tensor y({xv.dim(0), xv.dim(1), ho, wo});
  for (int p = 0; p < planes; ++p) {
    const double* src = xv.data() + static_cast<std::size_t>(p) * h * w;
    double* dst = y.data() + static_cast<std::size_t>(p) * ho * wo;
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) dst[(i / factor) * wo + j / factor] += src[i * w + j] * inv;
  }
  return make_op(std::move(y), {x}, [planes, h, w, factor, inv](Node& self) {
    if (!wants_grad(self, 0)) return;
    Tensor& g = parent(self, 0).grad_buffer();
    const int ho = h / factor, wo = w / factor;
    for (int p = 0; p < planes; ++p) {
      double* dst = g.data() + static_cast<std::size_t>(p) * h * w;
      const double* src = self.grad.data() + static_cast<std::size_t>(p) * ho * wo;
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) dst[i * w + j] += src[(i / factor) * wo + j / factor] * inv;
    }
  });
}

Var instance_norm(const Var& x, double eps) {
  const Tensor& xv = x.value();
  MERO_CHECK(xv.rank() == 4, "instance_norm expects NCHW");
  const int planes = xv.dim(0) * xv.dim(1);
  const std::size_t area = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
  Tensor y(xv.shape());
  std::vector<double> inv_std(static_cast<std::size_t>(planes));
#pragma omp parallel for if (xv.size() > kParallelGrain) schedule(static)
  for (int p = 0; p < planes; ++p) {
    const double* src = xv.data() + p * area;
    double* dst = y.data() + p * area;
    double mu = 0.0;
    for (std::size_t i = 0; i < area; ++i) mu += src[i];
    mu /= static_cast<double>(area);
    double var = 0.0;
    for (std::size_t i = 0; i < area; ++i) var += (src[i] - mu) * (src[i] - mu);
    var /= static_cast<double>(area);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(p)] = inv;
    for (std::size_t i = 0; i < area; ++i) dst[i] = (src[i] - mu) * inv;
  }
  return make_op(std::move(y), {x}, [planes, area, inv_std = std::move(inv_std)](Node& self) {
    if (!wants_grad(self, 0)) return;
    Tensor& g = parent(self, 0).grad_buffer();
#pragma omp parallel for if (g.size() > kParallelGrain) schedule(static)
    for (int p = 0; p < planes; ++p) {
      const double* ys = self.value.data() + p * area;
      const double* gy = self.grad.data() + p * area;
      double* gx = g.data() + p * area;
      double mg = 0.0, mgy = 0.0;
      for (std::size_t i = 0; i < area; ++i) {
        mg += gy[i];
        mgy += gy[i] * ys[i];
      }
      mg /= static_cast<double>(area);
      mgy /= static_cast<double>(area);
      const double inv = inv_std[static_cast<std::size_t>(p)];
      for (std::size_t i = 0; i < area; ++i) gx[i] += inv * (gy[i] - mg - ys[i] * mgy);
    }
  });
}

Var spade_modulate(const Var& normed, const Var& gamma, const Var& beta) {
  require_same_shape(normed, gamma, "spade_modulate");
  require_same_shape(normed, beta, "spade_modulate");
  const std::size_t n = normed.value().size();
  Tensor y(normed.shape());
  const double* xs = normed.value().data();
  const double* gs = gamma.value().data();
  const double* bs = beta.value().data();
  double* ys = y.data();
#pragma omp parallel for if (n > kParallelGrain) schedule(static)
  for (std::size_t i = 0; i < n; ++i) ys[i] = xs[i] * (1.0 + gs[i]) + bs[i];
  return make_op(std::move(y), {normed, gamma, beta}, [](Node& self) {
    const std::size_t n = self.grad.size();
    const double* gy = self.grad.data();
    const double* xs = parent(self, 0).value.data();
    const double* gs = parent(self, 1).value.data();
    double* dx = wants_grad(self, 0) ? parent(self, 0).grad_buffer().data() : nullptr;
    double* dg = wants_grad(self, 1) ? parent(self, 1).grad_buffer().data() : nullptr;
    double* db = wants_grad(self, 2) ? parent(self, 2).grad_buffer().data() : nullptr;
#pragma omp parallel for if (n > kParallelGrain) schedule(static)
    for (std::size_t i = 0; i < n; ++i) {
      if (dx) dx[i] += gy[i] * (1.0 + gs[i]);
      if (dg) dg[i] += gy[i] * xs[i];
      if (db) db[i] += gy[i];
    }
  });
}

Var binary_cross_entropy(const Var& prob, const Tensor& target, double eps) {
  MERO_CHECK(prob.shape() == target.shape(), "binary_cross_entropy shape mismatch " + shape_str(prob.shape()) + " vs " +
                                                  shape_str(target.shape()));
  const std::size_t n = target.size();
  Tensor y(target.shape());
  const double* ps = prob.value().data();
#pragma omp parallel for if (n > kParallelGrain) schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    const double p = std::clamp(ps[i], eps, 1.0 - eps);
    y[i] = -(target[i] * std::log(p) + (1.0 - target[i]) * std::log(1.0 - p));
  }
  return make_op(std::move(y), {prob}, [target, eps](Node& self) {
    if (!wants_grad(self, 0)) return;
    Tensor& g = parent(self, 0).grad_buffer();
    const double* ps = parent(self, 0).value.data();
    const std::size_t n = g.size();
#pragma omp parallel for if (n > kParallelGrain) schedule(static)
    for (std::size_t i = 0; i < n; ++i) {
      if (ps[i] < eps || ps[i] > 1.0 - eps) continue;
      g[i] += self.grad[i] * (-target[i] / ps[i] + (1.0 - target[i]) / (1.0 - ps[i]));
    }
  });
}

Var l1_loss(const Var& a, const Var& b) { return mean(abs(sub(a, b))); }

Tensor resize_nearest(const Tensor& x, int height, int width) {
  MERO_CHECK(x.rank() == 4, "resize_nearest expects NCHW");
  const int planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h == height && w == width) return x;
  Tensor y({x.dim(0), x.dim(1), height, width});
  for (int p = 0; p < planes; ++p) {
    const double* src = x.data() + static_cast<std::size_t>(p) * h * w;
    double* dst = y.data() + static_cast<std::size_t>(p) * height * width;
    for (int i = 0; i < height; ++i) {
      const int si = static_cast<int>(static_cast<long>(i) * h / height);
      for (int j = 0; j < width; ++j) dst[i * width + j] = src[si * w + static_cast<int>(static_cast<long>(j) * w / width)];
    }
  }
  return y;
}

}  // namespace mero::nn
