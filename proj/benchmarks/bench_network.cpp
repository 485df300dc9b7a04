// Whole-network and per-layer inference benchmarks. BM_ConvChannelSweep is
// the raw material of the latency staircase: out-channel counts that share a
// packed row strip share a timing tread.

#include <benchmark/benchmark.h>

#include "treadline/distill.hpp"
#include "treadline/layers.hpp"
#include "treadline/network.hpp"
#include "treadline/rng.hpp"

namespace {

using namespace treadline;

Tensor random_input(std::vector<int64_t> shape, uint64_t seed) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  for (auto& v : t.values()) v = rng.normal();
  return t;
}

void BM_WideResnetForward(benchmark::State& state) {
  const double widen = static_cast<double>(state.range(0)) / 4.0;
  const NetworkSpec spec = NetworkSpec::wide_resnet(16, widen, 3, 32, 10);
  Rng rng(1);
  Network net(spec, rng);
  net.set_training(false);
  const Tensor x = random_input({1, 3, 32, 32}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(x));
  state.SetItemsProcessed(state.iterations() * spec.mac_count());
  state.counters["macs"] = static_cast<double>(spec.mac_count());
}
BENCHMARK(BM_WideResnetForward)->Arg(2)->Arg(4)->Arg(8);  // widen 0.5, 1, 2

void BM_ConvChannelSweep(benchmark::State& state) {
  const int out = static_cast<int>(state.range(0));
  Rng rng(3);
  Conv3x3T<float> conv(64, out, 1, 1, rng);
  const Tensor x = random_input({1, 64, 28, 28}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(conv.forward(x));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(out) * 64 * 9 * 28 * 28);
}
BENCHMARK(BM_ConvChannelSweep)->DenseRange(8, 128, 8);

void BM_AttentionMap(benchmark::State& state) {
  const Tensor act = random_input({32, static_cast<int64_t>(state.range(0)), 8, 8}, 5);
  for (auto _ : state) benchmark::DoNotOptimize(attention_map(act));
}
BENCHMARK(BM_AttentionMap)->Arg(16)->Arg(64)->Arg(256);

}  // namespace
