// Parallel kernels against their serial references. Thread count follows
// OMP_NUM_THREADS; on a single core the gap is the blocking and packing alone.

#include <benchmark/benchmark.h>
#include <omp.h>

#include "mero/nn/kernels.hpp"
#include "mero/nn/reference.hpp"
#include "mero/nn/rng.hpp"

using namespace mero::nn;

namespace {

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(1);
  const Tensor a = rng.normal_tensor({n, n}), b = rng.normal_tensor({n, n});
  Tensor c({n, n});
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::gemm(false, false, n, n, n, a.data(), n, b.data(), n, 0.0, c.data(), n);
    else
      reference::gemm(false, false, n, n, n, a.data(), n, b.data(), n, 0.0, c.data(), n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * static_cast<int64_t>(n) * n * n);
  state.counters["threads"] = omp_get_max_threads();
}

// Shapes taken from the generator and the mask encoder at desk scale.
template <bool Parallel>
void BM_ConvForward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0)), hw = static_cast<int>(state.range(1));
  Rng rng(2);
  const Tensor x = rng.normal_tensor({2, c, hw, hw}), w = rng.normal_tensor({c, c, 3, 3});
  const Tensor bias = rng.normal_tensor({c});
  for (auto _ : state) {
    Tensor y = Parallel ? kernels::conv2d_forward(x, w, bias, 1, 1) : reference::conv2d_forward(x, w, bias, 1, 1);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * 2 * static_cast<int64_t>(c) * c * 9 * hw * hw);
}

template <bool Parallel>
void BM_ConvBackward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0)), hw = static_cast<int>(state.range(1));
  Rng rng(3);
  const Tensor x = rng.normal_tensor({2, c, hw, hw}), w = rng.normal_tensor({c, c, 3, 3});
  const Tensor dy = rng.normal_tensor({2, c, hw, hw});
  for (auto _ : state) {
    Tensor dx(x.shape()), dw(w.shape()), db({c});
    if constexpr (Parallel)
      kernels::conv2d_backward(x, w, dy, 1, 1, &dx, &dw, &db);
    else
      reference::conv2d_backward(x, w, dy, 1, 1, &dx, &dw, &db);
    benchmark::DoNotOptimize(dx.data());
  }
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Name("gemm/reference")->Arg(64)->Arg(256);
BENCHMARK(BM_Gemm<true>)->Name("gemm/parallel")->Arg(64)->Arg(256)->Arg(512);
BENCHMARK(BM_ConvForward<false>)->Name("conv_forward/reference")->Args({16, 32})->Args({32, 64});
BENCHMARK(BM_ConvForward<true>)->Name("conv_forward/parallel")->Args({16, 32})->Args({32, 64});
BENCHMARK(BM_ConvBackward<false>)->Name("conv_backward/reference")->Args({16, 32})->Args({32, 64});
BENCHMARK(BM_ConvBackward<true>)->Name("conv_backward/parallel")->Args({16, 32})->Args({32, 64});

BENCHMARK_MAIN();
