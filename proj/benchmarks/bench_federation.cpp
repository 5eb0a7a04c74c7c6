#include <benchmark/benchmark.h>

#include <random>

#include "dcfl/data.hpp"
#include "dcfl/federation.hpp"
#include "dcfl/partition.hpp"

namespace {

using namespace dcfl;

void BM_LocalUpdate(benchmark::State& state) {
  const DatasetPair data = synthetic_blobs(10, 32, 200, 1.0, 0);
  const MlpModel model(ModelConfig{});
  TrainingConfig cfg;
  cfg.mode = static_cast<TrainingMode>(state.range(0));
  cfg.local_epochs = 1;
  const PartitionPlan plan = iid_partition(data.train.labels, 10, 0, cfg.batch_size);
  const ParameterVector theta = model.initialize(0);
  const PrototypeSet protos = initial_prototypes(10, 32, 0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(local_update(model, theta, data.train, plan.assignments[0], &protos, cfg, 1, 0));
  }
  state.SetLabel(std::string(to_string(cfg.mode)));
}

void BM_AggregateUniform(benchmark::State& state) {
  std::mt19937_64 rng(0);
  std::normal_distribution<double> g;
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  std::vector<ClientUpdate> ups(5);
  for (auto& u : ups) {
    std::vector<double> v(n);
    for (double& x : v) x = g(rng);
    u.params = ParameterVector(Manifest{{"w", {n}}}, std::move(v));
    u.n_k = 100;
  }
  for (auto _ : state) benchmark::DoNotOptimize(aggregate_uniform(ups));
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(5 * n * sizeof(double)));
}

BENCHMARK(BM_LocalUpdate)->DenseRange(0, 3)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_AggregateUniform)->Arg(5000)->Arg(100000);

}  // namespace

BENCHMARK_MAIN();
