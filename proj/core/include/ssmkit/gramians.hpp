#pragma once

#include <Eigen/Core>

#include "ssmkit/lti.hpp"

namespace ssmkit {

// Reference solver for A X A^T - X + M = 0 by full vectorization:
// (A kron A - I) vec(X) = -vec(M). Cost grows as n^6, so it is guarded to
// n <= 32 and used only as an oracle and for baseline timing. Throws
// std::runtime_error when A is unstable or the vectorized system is
// near-singular (|1 - lambda_i lambda_j| < 1e-8 for some eigenvalue pair).
Eigen::MatrixXd solve_lyapunov_naive(const Eigen::MatrixXd& A, const Eigen::MatrixXd& M);

// Solves A X A^T - X + M = 0 for block-diagonal A made of 2x2 scaled
// rotations (radius[i], angle[i]); M is symmetric but otherwise arbitrary.
// The system decouples into one 4x4 solve per block pair (i <= j); the
// mirrored (j, i) blocks are filled by transposition so the result is
// exactly symmetric. O(n^2) work overall.
Eigen::MatrixXd solve_lyapunov_blocked(const Eigen::VectorXd& radius,
                                       const Eigen::VectorXd& angle, const Eigen::MatrixXd& M,
                                       int workers = 1);

// Same decoupling for the transposed-coefficient equation
// A^T X A - X + M = 0.
Eigen::MatrixXd solve_lyapunov_blocked_t(const Eigen::VectorXd& radius,
                                         const Eigen::VectorXd& angle, const Eigen::MatrixXd& M,
                                         int workers = 1);

struct GramianPair {
  Eigen::MatrixXd ctrl;  // reachability: A P A^T - P + B B^T = 0
  Eigen::MatrixXd obs;   // observability: A^T Q A - Q + C^T C = 0
};

// Pole radii used inside gramian computations are pulled away from the unit
// circle (|r| <= 1 - 1e-6) so the Lyapunov systems stay well conditioned.
Eigen::VectorXd stability_clamped_radius(const RotationSsm& params);

GramianPair gramians_blocked(const RotationSsm& params, int workers = 1);
// Oracle route through the dense solver; same radius clamp, n <= 32.
GramianPair gramians_naive(const RotationSsm& params);

// Lower-triangular F with F F^T ~= M for symmetric positive semidefinite M.
// Tries a plain Cholesky first; on semidefinite inputs falls back to a
// pivoted LDL^T with small negative diagonal entries clamped to zero,
// re-triangularized by QR. Throws std::runtime_error if M is indefinite
// beyond jitter * ||M||_F.
Eigen::MatrixXd cholesky_psd(const Eigen::MatrixXd& M, double jitter = 1e-12);

}  // namespace ssmkit
