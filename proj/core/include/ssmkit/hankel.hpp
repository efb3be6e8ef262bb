#pragma once

#include <Eigen/Core>
#include <utility>
#include <vector>

#include "ssmkit/gramians.hpp"
#include "ssmkit/lti.hpp"

namespace ssmkit {

// Singular values of S^T R (descending), where R R^T = P and S S^T = Q.
// These equal sqrt(eig(P Q)) but the factor route keeps everything real and
// nonnegative even when P Q is numerically non-normal.
Eigen::VectorXd hankel_singular_values(const Eigen::MatrixXd& P, const Eigen::MatrixXd& Q,
                                       double jitter = 1e-12);

Eigen::VectorXd layer_hankel_singular_values(const RotationSsm& params, int workers = 1);

// Sum over layers of each layer's Hankel singular value sum: the trainable
// low-rank penalty added to the classification loss.
double hankel_nuclear_norm(const std::vector<RotationSsm>& layers, int workers = 1);

struct RegGradient {
  Eigen::VectorXd radius_raw;   // q
  Eigen::VectorXd angle_raw;    // q
  Eigen::MatrixXd input_learn;  // n x (p-1); structural column carries none
  Eigen::MatrixXd output;       // p x n
  // feedthrough does not influence Hankel values: gradient is zero.
};

enum class LyapRoute { blocked, naive };

// Value and exact parameter gradient of one layer's Hankel singular value
// sum, by reverse mode through SVD -> Cholesky factors -> Lyapunov solves.
// The adjoint of each Lyapunov solve is another Lyapunov solve with the
// transposed coefficient, so both routes reuse the forward solvers.
// `naive` exists for runtime comparison only (n <= 32).
std::pair<double, RegGradient> hankel_sum_and_gradient(const RotationSsm& params,
                                                       LyapRoute route = LyapRoute::blocked,
                                                       int workers = 1);

struct HsvReport {
  std::vector<Eigen::VectorXd> layer_sigmas;  // descending, per layer
  // Values below floor_ratio * sigma_1 of their layer are reported as exact
  // zeros (decoupled padded states produce true zeros in exact arithmetic).
  static constexpr double floor_ratio = 1e-14;
};

HsvReport make_hsv_report(const std::vector<RotationSsm>& layers, int workers = 1);

}  // namespace ssmkit
