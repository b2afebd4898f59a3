// Serial against OpenMP replicate loop on a reduced (0,0) design.

#include "sae/montecarlo.hpp"

#include <benchmark/benchmark.h>

namespace {

sae::ScenarioConfig small_config(int replicates) {
  sae::ScenarioConfig cfg;
  cfg.areas = 20;
  cfg.replicates = replicates;
  return cfg;
}

void BM_MonteCarloSerial(benchmark::State& state) {
  const auto cfg = small_config(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(sae::run_monte_carlo(cfg, false));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_MonteCarloParallel(benchmark::State& state) {
  const auto cfg = small_config(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(sae::run_monte_carlo(cfg, true));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(BM_MonteCarloSerial)->Arg(8)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_MonteCarloParallel)->Arg(8)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
