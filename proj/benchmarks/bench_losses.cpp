#include <benchmark/benchmark.h>

#include <random>

#include "dcfl/losses.hpp"
#include "dcfl/ops.hpp"
#include "dcfl/tape.hpp"

namespace {

using namespace dcfl;

struct Batch {
  Tensor raw;
  std::vector<int> labels;
  PrototypeSet protos;
};

Batch make_batch(std::size_t b, std::size_t d, std::size_t c) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  Batch out{Tensor({b, d}, 0.0), std::vector<int>(b), {}};
  for (double& v : out.raw.values()) v = g(rng);
  for (std::size_t i = 0; i < b; ++i) out.labels[i] = static_cast<int>(i % c);
  Tensor p({c, d}, 0.0);
  for (double& v : p.values()) v = g(rng);
  for (std::size_t k = 0; k < c; ++k) {
    const Tensor row = l2_normalize(Tensor::vector({p.row(k).begin(), p.row(k).end()}));
    std::copy(row.values().begin(), row.values().end(), p.row(k).begin());
  }
  out.protos = {p, std::vector<std::size_t>(c, 1), std::vector<bool>(c, false)};
  return out;
}

template <typename LossFn>
void run_forward_backward(benchmark::State& state, LossFn loss) {
  const Batch b = make_batch(static_cast<std::size_t>(state.range(0)), 32, 10);
  for (auto _ : state) {
    Tape tape;
    Var x = tape.leaf(b.raw);
    Var out = loss(ad::l2_normalize_rows(x), b);
    tape.backward(out);
    benchmark::DoNotOptimize(x.grad().values().data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_SupCon(benchmark::State& state) {
  run_forward_backward(state, [](Var z, const Batch& b) { return ad::supcon_loss(z, b.labels, 0.5); });
}

void BM_SampleWise(benchmark::State& state) {
  run_forward_backward(state, [](Var z, const Batch& b) { return ad::dcfl_sample_loss(z, b.labels, 0.5, 0.9, 0.1).total; });
}

void BM_PrototypeWise(benchmark::State& state) {
  run_forward_backward(state, [](Var z, const Batch& b) {
    return ad::dcfl_prototype_loss(z, b.labels, b.protos, 0.5, 0.9, 0.1).total;
  });
}

BENCHMARK(BM_SupCon)->Arg(16)->Arg(64)->Arg(256);
BENCHMARK(BM_SampleWise)->Arg(16)->Arg(64)->Arg(256);
BENCHMARK(BM_PrototypeWise)->Arg(16)->Arg(64)->Arg(256);

}  // namespace

BENCHMARK_MAIN();
