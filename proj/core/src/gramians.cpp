#include "ssmkit/gramians.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <unsupported/Eigen/KroneckerProduct>

#include "ssmkit/threading.hpp"

namespace ssmkit {

namespace {

void require_symmetric(const Eigen::MatrixXd& M, const char* who) {
  if (M.rows() != M.cols()) throw std::invalid_argument(std::string(who) + ": M not square");
  const double scale = 1.0 + M.cwiseAbs().maxCoeff();
  if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale)
    throw std::invalid_argument(std::string(who) + ": M not symmetric");
}

inline Eigen::Matrix4d kron2(const Eigen::Matrix2d& P, const Eigen::Matrix2d& Q) {
  Eigen::Matrix4d K;
  K.block<2, 2>(0, 0) = P(0, 0) * Q;
  K.block<2, 2>(0, 2) = P(0, 1) * Q;
  K.block<2, 2>(2, 0) = P(1, 0) * Q;
  K.block<2, 2>(2, 2) = P(1, 1) * Q;
  return K;
}

// Ai X Aj^T - X + M2 = 0  =>  (Aj kron Ai - I4) vec(X) = -vec(M2).
inline Eigen::Matrix2d solve_pair(const Eigen::Matrix2d& Ai, const Eigen::Matrix2d& Aj,
                                  const Eigen::Matrix2d& M2) {
  Eigen::Matrix4d K = kron2(Aj, Ai);
  K.diagonal().array() -= 1.0;
  const Eigen::Vector4d rhs(-M2(0, 0), -M2(1, 0), -M2(0, 1), -M2(1, 1));
  const Eigen::Vector4d x = K.partialPivLu().solve(rhs);
  Eigen::Matrix2d X;
  X << x(0), x(2), x(1), x(3);
  return X;
}

Eigen::MatrixXd solve_blocked_impl(const Eigen::VectorXd& radius, const Eigen::VectorXd& angle,
                                   const Eigen::MatrixXd& M, int workers, bool transposed) {
  if (radius.size() != angle.size())
    throw std::invalid_argument("solve_lyapunov_blocked: radius/angle size mismatch");
  const Eigen::Index q = radius.size();
  const Eigen::Index n = 2 * q;
  require_symmetric(M, "solve_lyapunov_blocked");
  if (M.rows() != n) throw std::invalid_argument("solve_lyapunov_blocked: M is not 2q x 2q");
  if (radius.cwiseAbs().maxCoeff() >= 1.0)
    throw std::invalid_argument("solve_lyapunov_blocked: |radius| must be < 1");

  std::vector<Eigen::Matrix2d> Ab(q);
  for (Eigen::Index i = 0; i < q; ++i) {
    Ab[i] = scaled_rotation(radius[i], angle[i]);
    if (transposed) Ab[i].transposeInPlace();
  }

  Eigen::MatrixXd X(n, n);
  const std::size_t npairs = static_cast<std::size_t>(q) * (q + 1) / 2;
  parallel_for(npairs, workers, [&](std::size_t t) {
    // Unrank t -> (i, j) with i <= j, t = j(j+1)/2 + i (guard sqrt round-off).
    const auto ti = static_cast<Eigen::Index>(t);
    auto j = static_cast<Eigen::Index>((std::sqrt(8.0 * t + 1.0) - 1.0) / 2.0);
    while (j * (j + 1) / 2 > ti) --j;
    while ((j + 1) * (j + 2) / 2 <= ti) ++j;
    const Eigen::Index i = ti - j * (j + 1) / 2;
    const Eigen::Matrix2d Mij = M.block<2, 2>(2 * i, 2 * j);
    Eigen::Matrix2d Xij = solve_pair(Ab[i], Ab[j], Mij);
    if (i == j) {
      Xij = 0.5 * (Xij + Xij.transpose()).eval();
      X.block<2, 2>(2 * i, 2 * i) = Xij;
    } else {
      X.block<2, 2>(2 * i, 2 * j) = Xij;
      X.block<2, 2>(2 * j, 2 * i) = Xij.transpose();
    }
  });
  return X;
}

}  // namespace

Eigen::MatrixXd solve_lyapunov_naive(const Eigen::MatrixXd& A, const Eigen::MatrixXd& M) {
  const Eigen::Index n = A.rows();
  if (A.cols() != n) throw std::invalid_argument("solve_lyapunov_naive: A not square");
  if (n > 32)
    throw std::invalid_argument("solve_lyapunov_naive: n > 32 (vectorized route is n^6)");
  require_symmetric(M, "solve_lyapunov_naive");
  if (M.rows() != n) throw std::invalid_argument("solve_lyapunov_naive: size mismatch");

  const Eigen::VectorXcd ev = A.eigenvalues();
  if (!(ev.cwiseAbs().maxCoeff() < 1.0))
    throw std::runtime_error("solve_lyapunov_naive: A is not strictly stable");
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i; j < n; ++j)
      if (std::abs(1.0 - ev[i] * ev[j]) < 1e-8)
        throw std::runtime_error(
            "solve_lyapunov_naive: vectorized system near-singular (eigenvalue product ~ 1)");

  Eigen::MatrixXd K = Eigen::kroneckerProduct(A, A);
  K.diagonal().array() -= 1.0;
  const Eigen::Map<const Eigen::VectorXd> m(M.data(), n * n);
  const Eigen::VectorXd x = K.partialPivLu().solve(-m);
  Eigen::MatrixXd X = Eigen::Map<const Eigen::MatrixXd>(x.data(), n, n);
  return 0.5 * (X + X.transpose());
}

Eigen::MatrixXd solve_lyapunov_blocked(const Eigen::VectorXd& radius, const Eigen::VectorXd& angle,
                                       const Eigen::MatrixXd& M, int workers) {
  return solve_blocked_impl(radius, angle, M, workers, false);
}

Eigen::MatrixXd solve_lyapunov_blocked_t(const Eigen::VectorXd& radius,
                                         const Eigen::VectorXd& angle, const Eigen::MatrixXd& M,
                                         int workers) {
  return solve_blocked_impl(radius, angle, M, workers, true);
}

Eigen::VectorXd stability_clamped_radius(const RotationSsm& params) {
  const double lim = 1.0 - 1e-6;
  return params.radius().cwiseMax(-lim).cwiseMin(lim);
}

GramianPair gramians_blocked(const RotationSsm& params, int workers) {
  params.validate();
  const Eigen::VectorXd r = stability_clamped_radius(params);
  const Eigen::VectorXd a = params.angle();
  const Eigen::MatrixXd B = params.input_matrix();
  const Eigen::MatrixXd& C = params.output;
  GramianPair g;
  g.ctrl = solve_lyapunov_blocked(r, a, B * B.transpose(), workers);
  g.obs = solve_lyapunov_blocked_t(r, a, C.transpose() * C, workers);
  return g;
}

GramianPair gramians_naive(const RotationSsm& params) {
  params.validate();
  const Eigen::VectorXd r = stability_clamped_radius(params);
  const Eigen::VectorXd a = params.angle();
  const Eigen::Index n = params.state_dim();
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < params.blocks(); ++i)
    A.block<2, 2>(2 * i, 2 * i) = scaled_rotation(r[i], a[i]);
  const Eigen::MatrixXd B = params.input_matrix();
  const Eigen::MatrixXd& C = params.output;
  GramianPair g;
  g.ctrl = solve_lyapunov_naive(A, B * B.transpose());
  g.obs = solve_lyapunov_naive(A.transpose(), C.transpose() * C);
  return g;
}

Eigen::MatrixXd cholesky_psd(const Eigen::MatrixXd& M, double jitter) {
  require_symmetric(M, "cholesky_psd");
  const Eigen::Index n = M.rows();
  const double scale = M.norm();
  if (scale == 0.0) return Eigen::MatrixXd::Zero(n, n);

  Eigen::LLT<Eigen::MatrixXd> llt(M);
  if (llt.info() == Eigen::Success) return llt.matrixL();

  // LDLT::info() flags semidefinite inputs as NumericalIssue even though the
  // pivoted factorization itself is fine, so judge by the pivots instead.
  Eigen::LDLT<Eigen::MatrixXd> ldlt(M);
  Eigen::VectorXd d = ldlt.vectorD();
  if (!d.allFinite() || d.minCoeff() < -10.0 * jitter * scale)
    throw std::runtime_error("cholesky_psd: matrix indefinite beyond jitter tolerance");
  d = d.cwiseMax(0.0);

  Eigen::MatrixXd G = Eigen::MatrixXd(ldlt.matrixL()) * d.cwiseSqrt().asDiagonal();
  G = ldlt.transpositionsP().transpose() * G;  // undo the pivoting: G G^T = M

  // G is not triangular; QR of G^T gives G^T = Q R, so F = R^T is a lower
  // triangular factor with F F^T = G G^T.
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(G.transpose());
  Eigen::MatrixXd F =
      Eigen::MatrixXd(qr.matrixQR().topRows(n).triangularView<Eigen::Upper>()).transpose();
  for (Eigen::Index j = 0; j < n; ++j)
    if (F(j, j) < 0.0) F.col(j) = -F.col(j);
  return F;
}

}  // namespace ssmkit
