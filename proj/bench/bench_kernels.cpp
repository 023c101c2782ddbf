// Serial versus OpenMP paths of the data-parallel kernels.

#include "hdgl/data_ingest.hpp"
#include "hdgl/parallel.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace hdgl;
using kernels::Exec;

namespace {

const SyntheticCohort& cohort() {
  static const SyntheticCohort c = generate_synthetic_cohort({64, 116, 200, 0.8, 1});
  return c;
}

Exec exec_of(const benchmark::State& state) { return state.range(0) ? Exec::Parallel : Exec::Serial; }

void BM_WindowedFc(benchmark::State& state) {
  const RoiTimeSeries& ts = cohort().series.front();
  for (auto _ : state) benchmark::DoNotOptimize(kernels::windowed_fc(ts, {20, 5, false}, exec_of(state)));
}
BENCHMARK(BM_WindowedFc)->Arg(0)->Arg(1)->ArgName("parallel")->Unit(benchmark::kMillisecond);

void BM_BuildDynamicGraphs(benchmark::State& state) {
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        kernels::build_dynamic_graphs(cohort().series, {20, 5, false}, 0.3, exec_of(state)));
  }
}
BENCHMARK(BM_BuildDynamicGraphs)->Arg(0)->Arg(1)->ArgName("parallel")->Unit(benchmark::kMillisecond);

void BM_CorrelationDistance(benchmark::State& state) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  Mat rows(400, 64);
  for (Eigen::Index i = 0; i < rows.size(); ++i) rows.data()[i] = n(rng);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::correlation_distance_matrix(rows, exec_of(state)));
}
BENCHMARK(BM_CorrelationDistance)->Arg(0)->Arg(1)->ArgName("parallel")->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
