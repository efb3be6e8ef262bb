#include "ssmkit/hankel.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

namespace ssmkit {

namespace {

// Reverse mode through X = cholesky(P), lower triangular. Given Xbar
// (sensitivity to the factor), returns the symmetric sensitivity to P:
//   Pbar = 0.5 * sym( L^{-T} Phi(L^T tril(Xbar)) L^{-1} )... with
//   Phi = lower triangle, diagonal halved.
// Diagonal entries of L below a relative floor are lifted so the triangular
// solves stay finite on semidefinite inputs; the objective is evaluated at
// generic (full-rank) points in training, where the lift is inert.
Eigen::MatrixXd cholesky_backward(const Eigen::MatrixXd& L, const Eigen::MatrixXd& Lbar_in) {
  const Eigen::Index n = L.rows();
  Eigen::MatrixXd Lbar = Lbar_in.triangularView<Eigen::Lower>();
  Eigen::MatrixXd Y = L.transpose() * Lbar;
  Eigen::MatrixXd Phi = Y.triangularView<Eigen::StrictlyLower>();
  Phi.diagonal() = 0.5 * Y.diagonal();

  Eigen::MatrixXd Lg = L;
  const double floor = 1e-14 * std::max(1.0, L.diagonal().cwiseAbs().maxCoeff());
  for (Eigen::Index j = 0; j < n; ++j)
    if (std::abs(Lg(j, j)) < floor) Lg(j, j) = floor;

  // Pbar = Lg^{-T} * Phi * Lg^{-1}
  Eigen::MatrixXd Z = Lg.transpose().triangularView<Eigen::Upper>().solve(Phi);
  Eigen::MatrixXd W =
      Lg.transpose().triangularView<Eigen::Upper>().solve(Z.transpose()).transpose();
  return 0.5 * (W + W.transpose());
}

}  // namespace

Eigen::VectorXd hankel_singular_values(const Eigen::MatrixXd& P, const Eigen::MatrixXd& Q,
                                       double jitter) {
  const Eigen::MatrixXd R = cholesky_psd(P, jitter);
  const Eigen::MatrixXd S = cholesky_psd(Q, jitter);
  Eigen::BDCSVD<Eigen::MatrixXd> svd(S.transpose() * R);
  return svd.singularValues();
}

Eigen::VectorXd layer_hankel_singular_values(const RotationSsm& params, int workers) {
  const GramianPair g = gramians_blocked(params, workers);
  return hankel_singular_values(g.ctrl, g.obs);
}

double hankel_nuclear_norm(const std::vector<RotationSsm>& layers, int workers) {
  double total = 0.0;
  for (const auto& layer : layers) total += layer_hankel_singular_values(layer, workers).sum();
  return total;
}

std::pair<double, RegGradient> hankel_sum_and_gradient(const RotationSsm& params, LyapRoute route,
                                                       int workers) {
  params.validate();
  const Eigen::Index q = params.blocks();
  const Eigen::Index n = params.state_dim();
  const Eigen::Index p = params.io_dim();
  const Eigen::VectorXd r = stability_clamped_radius(params);
  const Eigen::VectorXd a = params.angle();
  const Eigen::MatrixXd B = params.input_matrix();
  const Eigen::MatrixXd& C = params.output;

  Eigen::MatrixXd A;  // realized only on the naive route
  if (route == LyapRoute::naive) {
    A = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < q; ++i) A.block<2, 2>(2 * i, 2 * i) = scaled_rotation(r[i], a[i]);
  }

  const auto solve_fwd = [&](const Eigen::MatrixXd& M) {
    return route == LyapRoute::blocked ? solve_lyapunov_blocked(r, a, M, workers)
                                       : solve_lyapunov_naive(A, M);
  };
  const auto solve_fwd_t = [&](const Eigen::MatrixXd& M) {
    return route == LyapRoute::blocked ? solve_lyapunov_blocked_t(r, a, M, workers)
                                       : solve_lyapunov_naive(A.transpose(), M);
  };

  const Eigen::MatrixXd P = solve_fwd(B * B.transpose());
  const Eigen::MatrixXd Q = solve_fwd_t(C.transpose() * C);
  const Eigen::MatrixXd R = cholesky_psd(P);
  const Eigen::MatrixXd S = cholesky_psd(Q);

  Eigen::BDCSVD<Eigen::MatrixXd> svd(S.transpose() * R,
                                     Eigen::ComputeThinU | Eigen::ComputeThinV);
  const double value = svd.singularValues().sum();

  // d(sum of singular values)/dM = U V^T; exact wherever M is full rank.
  const Eigen::MatrixXd Mbar = svd.matrixU() * svd.matrixV().transpose();
  const Eigen::MatrixXd Rbar = S * Mbar;
  const Eigen::MatrixXd Sbar = R * Mbar.transpose();
  const Eigen::MatrixXd Pbar = cholesky_backward(R, Rbar);
  const Eigen::MatrixXd Qbar = cholesky_backward(S, Sbar);

  // Adjoints of the two Lyapunov solves (transposed-coefficient solves).
  const Eigen::MatrixXd Lam = solve_fwd_t(Pbar);   // A^T Lam A - Lam + Pbar = 0
  const Eigen::MatrixXd Lam2 = solve_fwd(Qbar);    // A Lam2 A^T - Lam2 + Qbar = 0

  RegGradient grad;
  grad.radius_raw.resize(q);
  grad.angle_raw.resize(q);
  const Eigen::MatrixXd Bbar = 2.0 * (Lam * B);
  grad.input_learn = Bbar.rightCols(p - 1);
  grad.output = 2.0 * (C * Lam2);

  // A enters through both solves: Abar = 2 Lam A P + 2 Q A Lam2. Only the
  // 2x2 diagonal blocks of Abar are free parameters.
  const Eigen::MatrixXd LamP = Lam * P;
  const Eigen::MatrixXd QLam2 = Q * Lam2;
  const Eigen::VectorXd rtanh = params.radius();
  const Eigen::VectorXd ta = params.angle_raw.array().tanh();
  for (Eigen::Index i = 0; i < q; ++i) {
    Eigen::Matrix2d Abar = Eigen::Matrix2d::Zero();
    for (Eigen::Index k = 0; k < q; ++k) {
      const Eigen::Matrix2d Ak = scaled_rotation(r[k], a[k]);
      // (Lam A P)_(i,i) = sum_k Lam_(i,k) A_k P_(k,i); likewise for Q A Lam2.
      Abar += Lam.block<2, 2>(2 * i, 2 * k) * Ak * P.block<2, 2>(2 * k, 2 * i);
      Abar += Q.block<2, 2>(2 * i, 2 * k) * Ak * Lam2.block<2, 2>(2 * k, 2 * i);
    }
    Abar *= 2.0;
    const double c = std::cos(a[i]);
    const double s = std::sin(a[i]);
    Eigen::Matrix2d dAdr;
    dAdr << c, s, -s, c;
    Eigen::Matrix2d dAda;
    dAda << -s, c, -c, -s;
    dAda *= r[i];
    const double rbar = (Abar.array() * dAdr.array()).sum();
    const double abar = (Abar.array() * dAda.array()).sum();
    // Chain through the squashing activations; the stability clamp has zero
    // slope where active.
    const double drdraw = (std::abs(rtanh[i]) > 1.0 - 1e-6) ? 0.0 : 1.0 - rtanh[i] * rtanh[i];
    const double dadraw = 0.5 * M_PI * (1.0 - ta[i] * ta[i]);
    grad.radius_raw[i] = rbar * drdraw;
    grad.angle_raw[i] = abar * dadraw;
  }
  return {value, grad};
}

HsvReport make_hsv_report(const std::vector<RotationSsm>& layers, int workers) {
  HsvReport rep;
  rep.layer_sigmas.reserve(layers.size());
  for (const auto& layer : layers) {
    Eigen::VectorXd s = layer_hankel_singular_values(layer, workers);
    if (s.size() > 0) {
      const double floor = HsvReport::floor_ratio * s[0];
      for (Eigen::Index i = 0; i < s.size(); ++i)
        if (s[i] < floor) s[i] = 0.0;
    }
    rep.layer_sigmas.push_back(std::move(s));
  }
  return rep;
}

}  // namespace ssmkit
