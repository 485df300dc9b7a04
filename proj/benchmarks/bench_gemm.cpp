// GEMM and im2col microbenchmarks. The M sweep makes the row-strip
// quantization visible: walk BM_GemmRowSweep across a strip boundary and the
// time jumps while MACs grow linearly.

#include <benchmark/benchmark.h>

#include "treadline/gemm.hpp"
#include "treadline/rng.hpp"

namespace {

using treadline::Rng;
using treadline::Tensor;

Tensor random_matrix(int64_t rows, int64_t cols, uint64_t seed) {
  Tensor t({rows, cols});
  Rng rng(seed);
  for (auto& v : t.values()) v = rng.normal() * 0.1f;
  return t;
}

void BM_GemmSquare(benchmark::State& state) {
  const int64_t n = state.range(0);
  const Tensor a = random_matrix(n, n, 1);
  const Tensor b = random_matrix(n, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(treadline::gemm(a, b));
  state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(BM_GemmSquare)->Arg(64)->Arg(128)->Arg(256)->Arg(512);

// One output row per channel: M crosses the strip height around 16 and the
// direct-kernel limit at 8.
void BM_GemmRowSweep(benchmark::State& state) {
  const int64_t m = state.range(0);
  const int64_t k = 64 * 9;
  const int64_t n = 56 * 56;
  const Tensor a = random_matrix(m, k, 3);
  const Tensor b = random_matrix(k, n, 4);
  for (auto _ : state) benchmark::DoNotOptimize(treadline::gemm(a, b));
  state.SetItemsProcessed(state.iterations() * m * k * n);
}
BENCHMARK(BM_GemmRowSweep)->DenseRange(4, 48, 4);

void BM_Im2col(benchmark::State& state) {
  const int64_t c = state.range(0);
  Tensor input({1, c, 32, 32});
  Rng rng(5);
  for (auto& v : input.values()) v = rng.normal();
  for (auto _ : state)
    benchmark::DoNotOptimize(treadline::im2col(input, 3, 1, 1));
  state.SetItemsProcessed(state.iterations() * input.numel() * 9);
}
BENCHMARK(BM_Im2col)->Arg(16)->Arg(64)->Arg(128);

}  // namespace

BENCHMARK_MAIN();
