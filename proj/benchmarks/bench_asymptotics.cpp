#include <benchmark/benchmark.h>

#include "dcfl/asymptotics.hpp"

namespace {

using namespace dcfl;

void BM_EmpiricalContrastive(benchmark::State& state) {
  const SphereDistribution dist{8, 100.0};
  const Encoder f = Encoder::identity(8);
  const auto m = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(empirical_contrastive(f, dist, 0.5, m, 256, 0).value);
  state.SetItemsProcessed(state.iterations() * 256 * state.range(0));
}

void BM_LimitEstimate(benchmark::State& state) {
  const SphereDistribution dist{8, 100.0};
  const Encoder f = Encoder::identity(8);
  for (auto _ : state) benchmark::DoNotOptimize(limit_estimate(f, dist, 0.5, 256, 0, 2000).value);
}

BENCHMARK(BM_EmpiricalContrastive)->Arg(10)->Arg(1000)->Arg(100000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_LimitEstimate)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
