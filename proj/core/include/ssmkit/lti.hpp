#pragma once

#include <Eigen/Core>
#include <vector>

namespace ssmkit {

// 2x2 real block with eigenvalues r * exp(+-i*ang):
//   r * [ cos(ang)  sin(ang); -sin(ang)  cos(ang) ]
Eigen::Matrix2d scaled_rotation(double r, double ang);

// Stable discrete-time linear layer built from q independent 2x2 scaled
// rotation blocks. The raw parameters are unconstrained; effective pole
// radius is tanh(radius_raw) in (-1,1) and the effective pole angle is
// pi*(tanh(angle_raw)+1)/2 in [0,pi], so stability holds for any raw value.
//
// The input matrix has a fixed structural first column of stacked [1,0]
// blocks; only the remaining p-1 columns are free. State dim n = 2q and the
// layer maps p inputs to p outputs.
struct RotationSsm {
  Eigen::VectorXd radius_raw;   // q
  Eigen::VectorXd angle_raw;    // q
  Eigen::MatrixXd input_learn;  // n x (p-1), learnable input columns
  Eigen::MatrixXd output;       // p x n
  Eigen::VectorXd feedthrough;  // p, diagonal input passthrough

  Eigen::Index blocks() const { return radius_raw.size(); }
  Eigen::Index state_dim() const { return 2 * radius_raw.size(); }
  Eigen::Index io_dim() const { return output.rows(); }

  Eigen::VectorXd radius() const;  // tanh(radius_raw)
  Eigen::VectorXd angle() const;   // pi*(tanh(angle_raw)+1)/2
  // n x p realized input matrix (structural column prepended).
  Eigen::MatrixXd input_matrix() const;

  void validate() const;  // throws std::invalid_argument on shape mismatch
};

// General dense state-space realization x_k = A x_{k-1} + B u_k,
// y_k = C x_k + D u_k with x_0 = 0.
struct DenseSsm {
  Eigen::MatrixXd A;  // n x n
  Eigen::MatrixXd B;  // n x m
  Eigen::MatrixXd C;  // p x n
  Eigen::MatrixXd D;  // p x m

  Eigen::Index state_dim() const { return A.rows(); }
  Eigen::Index input_dim() const { return B.cols(); }
  Eigen::Index output_dim() const { return C.rows(); }

  void validate() const;
};

// taps[k] is the p x m response at lag k; taps[0] = D, taps[k] = C A^{k-1} B.
struct ImpulseResponse {
  std::vector<Eigen::MatrixXd> taps;
};

DenseSsm realize(const RotationSsm& params);

// Runs the recurrence column by column. u is m x L (one column per step);
// returns y as p x L. Reference implementation: other evaluation paths are
// checked against this one.
Eigen::MatrixXd simulate_sequential(const DenseSsm& sys, const Eigen::MatrixXd& u);

ImpulseResponse impulse_response(const DenseSsm& sys, int ntaps);

struct CanonicalizeResult {
  RotationSsm params;
  // Blocks appended to absorb real eigenvalues. Each carries one genuine
  // mode in its first state; the second state has zero input and output
  // coupling, so such blocks contribute exactly one nonzero Hankel value.
  std::vector<Eigen::Index> padded_blocks;
  bool perturbed = false;  // true if a random perturbation was needed
};

// Finds rotation-form parameters with the same impulse response as `sys`
// (which must be stable, square, and have diagonal D). Near-defective inputs
// are retried once with an O(perturb_eps) perturbation of A; if that also
// fails, throws std::runtime_error.
CanonicalizeResult to_rotation_form(const DenseSsm& sys, double perturb_eps = 1e-10);

}  // namespace ssmkit
