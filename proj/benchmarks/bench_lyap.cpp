#include <benchmark/benchmark.h>

#include <Eigen/Dense>
#include <cmath>

#include "ssmkit/gramians.hpp"
#include "ssmkit/hankel.hpp"
#include "ssmkit/rng.hpp"

using namespace ssmkit;

namespace {

struct Problem {
  Eigen::VectorXd radius, angle;
  Eigen::MatrixXd A, M;
};

Problem make_problem(int n) {
  const Eigen::Index q = n / 2;
  Rng rng(1234);
  Problem p;
  p.radius.resize(q);
  p.angle.resize(q);
  for (Eigen::Index i = 0; i < q; ++i) {
    p.radius[i] = rng.uniform(0.3, 0.95);
    p.angle[i] = rng.uniform(0.0, M_PI);
  }
  p.A = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < q; ++i)
    p.A.block<2, 2>(2 * i, 2 * i) = scaled_rotation(p.radius[i], p.angle[i]);
  p.M = rng.gaussian_matrix(n, n);
  p.M = ((p.M + p.M.transpose()) / 2.0).eval();
  return p;
}

void BM_lyap_blocked(benchmark::State& state) {
  const Problem p = make_problem(static_cast<int>(state.range(0)));
  for (auto _ : state)
    benchmark::DoNotOptimize(solve_lyapunov_blocked(p.radius, p.angle, p.M).sum());
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_lyap_blocked)->RangeMultiplier(2)->Range(8, 1024)->Complexity();

void BM_lyap_naive(benchmark::State& state) {
  const Problem p = make_problem(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(solve_lyapunov_naive(p.A, p.M).sum());
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_lyap_naive)->RangeMultiplier(2)->Range(4, 32)->Complexity();

void BM_reg_gradient(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(77);
  RotationSsm sys;
  const Eigen::Index q = n / 2, p = 8;
  sys.radius_raw = rng.gaussian_vector(q, 1.5, 0.25);
  sys.angle_raw = rng.gaussian_vector(q);
  sys.input_learn = rng.gaussian_matrix(n, p - 1, 0.0, 0.1);
  sys.output = rng.gaussian_matrix(p, n, 0.0, 0.1);
  sys.feedthrough = rng.gaussian_vector(p);
  for (auto _ : state)
    benchmark::DoNotOptimize(hankel_sum_and_gradient(sys).first);
}
BENCHMARK(BM_reg_gradient)->Arg(16)->Arg(32)->Arg(64)->Arg(128);

}  // namespace

BENCHMARK_MAIN();
