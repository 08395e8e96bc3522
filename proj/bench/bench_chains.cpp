// Serial vs parallel chain execution on the location-scale case study.
// The thread count is the benchmark argument; draws are identical for every
// value, only wall time changes.

#include <benchmark/benchmark.h>
#include <omp.h>

#include "greylag/regression.hpp"
#include "greylag/schemes.hpp"

namespace {

using namespace greylag;

const DistRegModel& case_study_model() {
  static const DistRegModel model = [] {
    const SimulatedData data =
        simulate_location_scale(221, 390.0, 720.0, lidar_like_mean, lidar_like_log_sd, 42);
    return location_scale_model(data.x, data.y);
  }();
  return model;
}

void run_chains(benchmark::State& state, Scheme scheme) {
  SchemeRunOptions options;
  options.chains = 4;
  options.warmup = 200;
  options.posterior = 200;
  options.threads = int(state.range(0));
  for (auto _ : state) {
    SchemeRun run = run_scheme(scheme, case_study_model(), options);
    benchmark::DoNotOptimize(run.results);
  }
  state.counters["chains"] = options.chains;
  state.counters["hardware_threads"] = omp_get_num_procs();
}

void BM_IWLSGibbs(benchmark::State& state) { run_chains(state, Scheme::IwlsGibbs); }
void BM_NUTS2(benchmark::State& state) { run_chains(state, Scheme::Nuts2); }

BENCHMARK(BM_IWLSGibbs)->ArgName("threads")->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_NUTS2)->ArgName("threads")->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond)->UseRealTime();

}  // namespace

BENCHMARK_MAIN();
