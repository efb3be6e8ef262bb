#include <benchmark/benchmark.h>

#include <Eigen/Dense>

#include "ssmkit/rng.hpp"
#include "ssmkit/scan.hpp"

using namespace ssmkit;

namespace {

RotationSsm make_layer(Eigen::Index n, Eigen::Index p) {
  Rng rng(42);
  RotationSsm sys;
  const Eigen::Index q = n / 2;
  sys.radius_raw = rng.gaussian_vector(q, 1.5, 0.25);
  sys.angle_raw = rng.gaussian_vector(q);
  sys.input_learn = rng.gaussian_matrix(n, p - 1, 0.0, 0.05);
  sys.output = rng.gaussian_matrix(p, n, 0.0, 0.05);
  sys.feedthrough = rng.gaussian_vector(p);
  return sys;
}

void BM_scan_length(benchmark::State& state) {
  const RotationSsm sys = make_layer(64, 64);
  Rng rng(7);
  const Eigen::MatrixXd u = rng.gaussian_matrix(64, state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(scan_sequence(sys, u).sum());
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_scan_length)->RangeMultiplier(4)->Range(1024, 65536);

void BM_scan_workers(benchmark::State& state) {
  const RotationSsm sys = make_layer(64, 64);
  Rng rng(7);
  const Eigen::MatrixXd u = rng.gaussian_matrix(64, 16384);
  for (auto _ : state)
    benchmark::DoNotOptimize(scan_sequence(sys, u, static_cast<int>(state.range(0))).sum());
  state.SetItemsProcessed(state.iterations() * 16384);
}
BENCHMARK(BM_scan_workers)->Arg(1)->Arg(2)->Arg(4)->Arg(8);

void BM_scan_batch(benchmark::State& state) {
  const Eigen::Index batch = state.range(0);
  const RotationSsm sys = make_layer(64, 64);
  Rng rng(7);
  const Eigen::MatrixXd u = rng.gaussian_matrix(256 * batch, 64);
  for (auto _ : state) benchmark::DoNotOptimize(scan_batch(sys, u, batch).sum());
  state.SetItemsProcessed(state.iterations() * 256 * batch);
}
BENCHMARK(BM_scan_batch)->Arg(1)->Arg(8)->Arg(50);

}  // namespace

BENCHMARK_MAIN();
