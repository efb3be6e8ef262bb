#pragma once

#include <Eigen/Core>

#include "ssmkit/lti.hpp"

namespace ssmkit {

// One element of the scan monoid. An element represents the affine map
// x -> A(radius, angle) x + state, where A is block-diagonal of 2x2 scaled
// rotations; composing two maps multiplies radii elementwise, adds angles,
// and pushes the earlier state through the later map. Angles accumulate
// without wrapping: reduction mod 2*pi would break exact associativity of
// the angle component.
struct ScanElement {
  Eigen::VectorXd radius;  // q
  Eigen::VectorXd angle;   // q
  Eigen::VectorXd state;   // n = 2q
};

ScanElement scan_identity(Eigen::Index q);

// (a.radius o b.radius, a.angle + b.angle, A(b.radius, b.angle) a.state +
// b.state). The 2x2 blocks are applied pairwise, never materialized.
ScanElement combine(const ScanElement& a, const ScanElement& b);

// Evaluates y_k = C x_k + feedthrough o u_k over the whole sequence;
// u is p x L, one column per step, x_0 = 0. Matches
// simulate_sequential(realize(params), u) to FP reassociation error. With
// workers > 1, runs a two-pass chunked scan: per-chunk summaries, a
// sequential exclusive scan of the summaries, then seeded per-chunk replay.
// Output is bitwise reproducible for a fixed worker count; different worker
// counts agree to ~1e-12 relative (the chunk seams reassociate sums).
Eigen::MatrixXd scan_sequence(const RotationSsm& params, const Eigen::MatrixXd& u,
                              int workers = 1);

// Batched variant sharing parameters across sequences. Rows are packed
// time-major: row t*batch + b is step t of sequence b, features across
// columns (u is (T*batch) x p). Optionally writes the full state trajectory
// ((T*batch) x n) for reverse mode.
Eigen::MatrixXd scan_batch(const RotationSsm& params, const Eigen::MatrixXd& u,
                           Eigen::Index batch, int workers = 1,
                           Eigen::MatrixXd* states_out = nullptr);

struct ScanBackward {
  Eigen::VectorXd radius_raw;   // q
  Eigen::VectorXd angle_raw;    // q
  Eigen::MatrixXd input_learn;  // n x (p-1)
  Eigen::MatrixXd output;       // p x n
  Eigen::VectorXd feedthrough;  // p
  Eigen::MatrixXd u_bar;        // (T*batch) x p
};

// Reverse mode of scan_batch. `states` is the trajectory captured by the
// forward pass; `y_bar` is dLoss/dy in the same packing as u. The time loop
// runs backward sequentially (the adjoint recurrence applies A^T, i.e. the
// reversed rotation).
ScanBackward scan_backward(const RotationSsm& params, const Eigen::MatrixXd& u,
                           Eigen::Index batch, const Eigen::MatrixXd& states,
                           const Eigen::MatrixXd& y_bar);

}  // namespace ssmkit
