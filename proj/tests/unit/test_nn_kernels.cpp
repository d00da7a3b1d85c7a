#include <omp.h>

#include <array>
#include <tuple>

#include "doctest.h"
#include "mero/nn/kernels.hpp"
#include "mero/nn/reference.hpp"
#include "mero/nn/rng.hpp"

using namespace mero::nn;

TEST_CASE("parallel gemm matches the serial reference for every transpose combination") {
  Rng rng(11);
  const std::array<std::array<int, 3>, 5> sizes{{{1, 1, 1}, {7, 13, 5}, {33, 70, 300}, {100, 17, 9}, {6, 16, 256}}};
  for (const auto& [m, n, k] : sizes) {
    for (bool ta : {false, true}) {
      for (bool tb : {false, true}) {
        const Tensor a = rng.uniform_tensor(ta ? Shape{k, m} : Shape{m, k}, -1, 1);
        const Tensor b = rng.uniform_tensor(tb ? Shape{n, k} : Shape{k, n}, -1, 1);
        const int lda = ta ? m : k;
        const int ldb = tb ? k : n;
        for (double beta : {0.0, 1.0}) {
          Tensor c_fast = rng.uniform_tensor({m, n}, -1, 1);
          Tensor c_ref = c_fast;
          kernels::gemm(ta, tb, m, n, k, a.data(), lda, b.data(), ldb, beta, c_fast.data(), n);
          reference::gemm(ta, tb, m, n, k, a.data(), lda, b.data(), ldb, beta, c_ref.data(), n);
          CHECK(max_abs_diff(c_fast, c_ref) < 1e-11);
        }
      }
    }
  }
}

TEST_CASE("conv2d forward and backward match the direct reference") {
  Rng rng(5);
  struct Case {
    int n, cin, h, w, cout, k, stride, pad;
  };
  for (const Case& c : {Case{2, 3, 9, 7, 4, 3, 1, 1}, Case{1, 2, 8, 8, 5, 4, 2, 1}, Case{3, 4, 6, 6, 2, 1, 1, 0},
                        Case{1, 1, 16, 16, 3, 3, 2, 1}}) {
    const Tensor x = rng.uniform_tensor({c.n, c.cin, c.h, c.w}, -1, 1);
    const Tensor w = rng.uniform_tensor({c.cout, c.cin, c.k, c.k}, -1, 1);
    const Tensor b = rng.uniform_tensor({c.cout}, -1, 1);
    const Tensor y_fast = kernels::conv2d_forward(x, w, b, c.stride, c.pad);
    const Tensor y_ref = reference::conv2d_forward(x, w, b, c.stride, c.pad);
    REQUIRE(y_fast.shape() == y_ref.shape());
    CHECK(max_abs_diff(y_fast, y_ref) < 1e-11);

    const Tensor dy = rng.uniform_tensor(y_ref.shape(), -1, 1);
    Tensor dx_f(x.shape()), dw_f(w.shape()), db_f(b.shape());
    Tensor dx_r(x.shape()), dw_r(w.shape()), db_r(b.shape());
    kernels::conv2d_backward(x, w, dy, c.stride, c.pad, &dx_f, &dw_f, &db_f);
    reference::conv2d_backward(x, w, dy, c.stride, c.pad, &dx_r, &dw_r, &db_r);
    CHECK(max_abs_diff(dx_f, dx_r) < 1e-11);
    CHECK(max_abs_diff(dw_f, dw_r) < 1e-11);
    CHECK(max_abs_diff(db_f, db_r) < 1e-11);
  }
}

TEST_CASE("gemm results do not depend on the thread count") {
  Rng rng(3);
  const int m = 64, n = 4096, k = 200;
  const Tensor a = rng.uniform_tensor({m, k}, -1, 1);
  const Tensor b = rng.uniform_tensor({k, n}, -1, 1);
  Tensor c1({m, n}), c4({m, n});
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  kernels::gemm(false, false, m, n, k, a.data(), k, b.data(), n, 0.0, c1.data(), n);
  omp_set_num_threads(4);
  kernels::gemm(false, false, m, n, k, a.data(), k, b.data(), n, 0.0, c4.data(), n);
  omp_set_num_threads(saved);
  CHECK(c1 == c4);
}
