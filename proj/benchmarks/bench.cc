#include <benchmark/benchmark.h>

#include "tbfp/amplitudes.h"
#include "tbfp/analysis.h"
#include "tbfp/config_io.h"
#include "tbfp/imperfections.h"
#include "tbfp/monte_carlo.h"

using namespace tbfp;

namespace {

ExperimentConfig preset(const std::string& name) { return validate_config(load_raw_config(name)).config; }

void BM_evolve_state(benchmark::State& state) {
  auto c = preset("fig3-ideal");
  c.source.dimension = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(evolve_state(c).total_probability());
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_evolve_state)->RangeMultiplier(2)->Range(8, 256)->Complexity();

void BM_phase_response(benchmark::State& state) {
  const auto c = preset("paper-experiment");
  for (auto _ : state) benchmark::DoNotOptimize(phase_response(c, StopChannel::db, PeakWindow::range(-1, 1)));
}
BENCHMARK(BM_phase_response);

void BM_degraded_scan(benchmark::State& state) {
  const auto c = preset("fig8-degraded");
  const auto noise = noise_from(c);
  const auto grid = uniform_grid(32);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        degraded_phase_scan(c, noise, c.spectral, grid, PeakWindow::of({0}), StopChannel::db, state.range(0), 1, 1));
  }
}
BENCHMARK(BM_degraded_scan)->Arg(10)->Arg(100);

void BM_simulate_gates(benchmark::State& state) {
  const auto c = preset("paper-experiment");
  const auto rates = rate_chain_from(c);
  for (auto _ : state) benchmark::DoNotOptimize(simulate_gates(c, rates, state.range(0), 1));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_simulate_gates)->Arg(100000);

void BM_histogram(benchmark::State& state) {
  const auto c = preset("paper-experiment");
  const auto sim = simulate_gates(c, rate_chain_from(c), 200000, 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(build_histogram(sim.stream, StopChannel::db, sim.stream.delta_tau_ns).total());
  }
  state.SetItemsProcessed(state.iterations() * sim.stream.events.size());
}
BENCHMARK(BM_histogram);

}  // namespace

BENCHMARK_MAIN();
