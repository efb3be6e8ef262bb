#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "ssmkit/gramians.hpp"
#include "ssmkit/lti.hpp"
#include "ssmkit/rng.hpp"

using namespace ssmkit;

namespace {

RotationSsm random_layer(Rng& rng, Eigen::Index q, Eigen::Index p, double max_radius = 0.95) {
  RotationSsm s;
  s.radius_raw.resize(q);
  s.angle_raw.resize(q);
  for (Eigen::Index i = 0; i < q; ++i) {
    s.radius_raw[i] = std::atanh(rng.uniform(0.1, max_radius));
    s.angle_raw[i] = rng.gaussian();
  }
  s.input_learn = rng.gaussian_matrix(2 * q, p - 1);
  s.output = rng.gaussian_matrix(p, 2 * q);
  s.feedthrough = rng.gaussian_vector(p);
  return s;
}

Eigen::MatrixXd block_diag(const Eigen::VectorXd& radius, const Eigen::VectorXd& angle) {
  const Eigen::Index n = 2 * radius.size();
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < radius.size(); ++i)
    A.block<2, 2>(2 * i, 2 * i) = scaled_rotation(radius[i], angle[i]);
  return A;
}

Eigen::MatrixXd random_sym(Rng& rng, Eigen::Index n) {
  const Eigen::MatrixXd M = rng.gaussian_matrix(n, n);
  return (M + M.transpose()) / 2.0;
}

double rel_fro(const Eigen::MatrixXd& got, const Eigen::MatrixXd& want) {
  return (got - want).norm() / std::max(1e-300, want.norm());
}

}  // namespace

TEST_CASE("blocked solver satisfies the residual equation") {
  Rng rng(101);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index q = 1 + rng.index(8);
    Eigen::VectorXd radius(q), angle(q);
    for (Eigen::Index i = 0; i < q; ++i) {
      radius[i] = rng.uniform(-0.95, 0.95);
      angle[i] = rng.uniform(0.0, M_PI);
    }
    const Eigen::MatrixXd M = random_sym(rng, 2 * q);
    const Eigen::MatrixXd X = solve_lyapunov_blocked(radius, angle, M);
    const Eigen::MatrixXd A = block_diag(radius, angle);
    CHECK((A * X * A.transpose() - X + M).norm() / M.norm() < 1e-12);
    CHECK(rel_fro(X, X.transpose()) < 1e-15);

    const Eigen::MatrixXd Xt = solve_lyapunov_blocked_t(radius, angle, M);
    CHECK((A.transpose() * Xt * A - Xt + M).norm() / M.norm() < 1e-12);
  }
}

TEST_CASE("blocked equals the Kronecker oracle") {
  Rng rng(103);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index q = 1 + rng.index(6);
    Eigen::VectorXd radius(q), angle(q);
    for (Eigen::Index i = 0; i < q; ++i) {
      radius[i] = rng.uniform(0.05, 0.9);
      angle[i] = rng.uniform(0.0, M_PI);
    }
    const Eigen::MatrixXd M = random_sym(rng, 2 * q);
    const Eigen::MatrixXd A = block_diag(radius, angle);
    CHECK(rel_fro(solve_lyapunov_blocked(radius, angle, M), solve_lyapunov_naive(A, M)) <
          1e-11);
  }
}

TEST_CASE("gramians match the truncated series oracle") {
  // P = sum_k A^k B B^T (A^T)^k, truncated once the powers are negligible.
  Rng rng(107);
  const RotationSsm s = random_layer(rng, 4, 3, 0.85);
  const DenseSsm sys = realize(s);
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(8, 8);
  Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(8, 8);
  Eigen::MatrixXd Apow = Eigen::MatrixXd::Identity(8, 8);
  for (int k = 0; k < 800; ++k) {
    P += Apow * sys.B * sys.B.transpose() * Apow.transpose();
    Q += Apow.transpose() * sys.C.transpose() * sys.C * Apow;
    Apow = (sys.A * Apow).eval();
  }
  const GramianPair g = gramians_blocked(s);
  CHECK(rel_fro(g.ctrl, P) < 1e-12);
  CHECK(rel_fro(g.obs, Q) < 1e-12);
}

TEST_CASE("blocked and naive gramian routes agree") {
  Rng rng(109);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::Index q = 1 + rng.index(8), p = 1 + rng.index(4);
    const RotationSsm s = random_layer(rng, q, p);
    const GramianPair a = gramians_blocked(s);
    const GramianPair b = gramians_naive(s);
    CHECK(rel_fro(a.ctrl, b.ctrl) < 1e-10);
    CHECK(rel_fro(a.obs, b.obs) < 1e-10);
  }
}

TEST_CASE("worker count does not change the blocked result") {
  Rng rng(113);
  const Eigen::Index q = 9;
  Eigen::VectorXd radius(q), angle(q);
  for (Eigen::Index i = 0; i < q; ++i) {
    radius[i] = rng.uniform(-0.9, 0.9);
    angle[i] = rng.uniform(0.0, M_PI);
  }
  const Eigen::MatrixXd M = random_sym(rng, 2 * q);
  const Eigen::MatrixXd x1 = solve_lyapunov_blocked(radius, angle, M, 1);
  const Eigen::MatrixXd x4 = solve_lyapunov_blocked(radius, angle, M, 4);
  CHECK((x1 - x4).cwiseAbs().maxCoeff() == 0.0);  // disjoint writes, same arithmetic
}

TEST_CASE("radius clamp keeps near-unit poles solvable") {
  RotationSsm s;
  s.radius_raw = Eigen::VectorXd::Constant(1, 30.0);  // tanh saturates to ~1
  s.angle_raw = Eigen::VectorXd::Constant(1, 0.2);
  s.input_learn = Eigen::MatrixXd::Constant(2, 1, 0.5);
  s.output = Eigen::MatrixXd::Identity(2, 2);
  s.feedthrough = Eigen::VectorXd::Zero(2);
  CHECK(stability_clamped_radius(s)[0] == doctest::Approx(1.0 - 1e-6).epsilon(1e-12));
  const GramianPair g = gramians_blocked(s);
  CHECK(g.ctrl.allFinite());
  CHECK(g.obs.allFinite());
  // clamped radius implies a bounded gramian: trace <= n / (1 - r^2) * ||B||^2
  CHECK(g.ctrl.trace() > 0.0);
}

TEST_CASE("naive solver guards") {
  Rng rng(127);
  SUBCASE("unstable A throws") {
    Eigen::MatrixXd A = Eigen::MatrixXd::Identity(4, 4) * 1.01;
    CHECK_THROWS_AS(solve_lyapunov_naive(A, random_sym(rng, 4)), std::runtime_error);
  }
  SUBCASE("near-singular pencil throws") {
    // real eigenvalue r with 1 - r^2 below the threshold
    Eigen::MatrixXd A = Eigen::MatrixXd::Identity(2, 2) * (1.0 - 1e-10);
    CHECK_THROWS_AS(solve_lyapunov_naive(A, random_sym(rng, 2)), std::runtime_error);
  }
  SUBCASE("size guard") {
    Eigen::MatrixXd A = Eigen::MatrixXd::Identity(34, 34) * 0.5;
    CHECK_THROWS_AS(solve_lyapunov_naive(A, random_sym(rng, 34)), std::invalid_argument);
  }
}

TEST_CASE("cholesky_psd") {
  Rng rng(131);
  SUBCASE("positive definite input") {
    const Eigen::MatrixXd G = rng.gaussian_matrix(6, 6);
    const Eigen::MatrixXd M = G * G.transpose() + Eigen::MatrixXd::Identity(6, 6);
    const Eigen::MatrixXd F = cholesky_psd(M);
    CHECK(rel_fro(F * F.transpose(), M) < 1e-12);
    CHECK(F.triangularView<Eigen::StrictlyUpper>().toDenseMatrix().norm() == 0.0);
  }
  SUBCASE("rank-deficient input") {
    const Eigen::MatrixXd G = rng.gaussian_matrix(8, 3);
    const Eigen::MatrixXd M = G * G.transpose();
    const Eigen::MatrixXd F = cholesky_psd(M);
    CHECK(rel_fro(F * F.transpose(), M) < 1e-10);
    CHECK(F.triangularView<Eigen::StrictlyUpper>().toDenseMatrix().norm() == 0.0);
  }
  SUBCASE("zero input") {
    const Eigen::MatrixXd F = cholesky_psd(Eigen::MatrixXd::Zero(5, 5));
    CHECK(F.norm() == 0.0);
  }
  SUBCASE("indefinite input throws") {
    Eigen::MatrixXd M = Eigen::MatrixXd::Identity(4, 4);
    M(3, 3) = -1.0;
    CHECK_THROWS_AS(cholesky_psd(M), std::runtime_error);
  }
}
