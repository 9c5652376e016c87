// Microbenchmarks for the hot paths: conv forward/backward, full-model
// forward, structural accounting and one pruning round.

#include <benchmark/benchmark.h>

#include "winnow/accounting.hpp"
#include "winnow/ops.hpp"
#include "winnow/pruning.hpp"
#include "winnow/resnet.hpp"
#include "winnow/rng.hpp"
#include "winnow/tensor.hpp"

namespace {

using namespace winnow;

void BM_Conv2dForward(benchmark::State& state) {
  Rng rng(1);
  const Tensor input = Tensor::randn({8, 16, 56, 56}, rng);
  const Tensor weight = Tensor::randn({16, 16, 3, 3}, rng, 0.1);
  NoGradGuard guard;
  for (auto _ : state) {
    Tensor out = ops::conv2d(input, weight, 1, 1);
    benchmark::DoNotOptimize(out.data().data());
  }
}
BENCHMARK(BM_Conv2dForward)->Unit(benchmark::kMillisecond);

void BM_Conv2dBackward(benchmark::State& state) {
  Rng rng(2);
  for (auto _ : state) {
    state.PauseTiming();
    Tensor input = Tensor::randn({8, 16, 56, 56}, rng, 1.0, true);
    Tensor weight = Tensor::randn({16, 16, 3, 3}, rng, 0.1, true);
    Tensor loss = ops::sum(ops::conv2d(input, weight, 1, 1));
    state.ResumeTiming();
    backward(loss);
    benchmark::DoNotOptimize(weight.impl());
  }
}
BENCHMARK(BM_Conv2dBackward)->Unit(benchmark::kMillisecond);

void BM_Resnet18Forward(benchmark::State& state) {
  Rng rng(3);
  ResnetConfig config;
  config.depth = 18;
  config.width_scale = 0.25f;
  config.in_h = 64;
  config.in_w = 64;
  ModelGraph model = build_resnet(config, rng);
  const Tensor batch = Tensor::randn({4, 1, 64, 64}, rng);
  NoGradGuard guard;
  for (auto _ : state) {
    Tensor out = model.forward(batch, ops::BnMode::kEval);
    benchmark::DoNotOptimize(out.data().data());
  }
}
BENCHMARK(BM_Resnet18Forward)->Unit(benchmark::kMillisecond);

void BM_CostReport(benchmark::State& state) {
  Rng rng(4);
  ResnetConfig config;
  config.depth = 50;
  config.in_channels = 3;
  config.num_classes = 1000;
  ModelGraph model = build_resnet(config, rng);
  for (auto _ : state) {
    CostReport report = cost_report(model);
    benchmark::DoNotOptimize(report.total_flops);
  }
}
BENCHMARK(BM_CostReport)->Unit(benchmark::kMicrosecond);

void BM_HardPruneRound(benchmark::State& state) {
  Rng rng(5);
  ResnetConfig config;
  config.depth = 18;
  config.in_h = 32;
  config.in_w = 32;
  for (auto _ : state) {
    state.PauseTiming();
    ModelGraph model = build_resnet(config, rng);
    PruneMask mask;
    state.ResumeTiming();
    hard_prune_round(model, mask, 0.3, 2.0);
    benchmark::DoNotOptimize(count_pruned(mask));
  }
}
BENCHMARK(BM_HardPruneRound)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
