#pragma once

#include <Eigen/Core>
#include <complex>
#include <vector>

#include "ssmkit/hankel.hpp"
#include "ssmkit/lti.hpp"

namespace ssmkit {

struct ReducedSsm {
  enum class Mode { dense_real, diagonal_complex };
  Mode mode = Mode::dense_real;

  // dense_real realization.
  Eigen::MatrixXd A;  // r x r
  Eigen::MatrixXd B;  // r x m
  Eigen::MatrixXd C;  // p x r
  Eigen::MatrixXd D;  // p x m

  // diagonal_complex realization; lambda closed under conjugation so real
  // input sequences map to real output sequences.
  Eigen::VectorXcd lambda;
  Eigen::MatrixXcd Bc;  // r x m
  Eigen::MatrixXcd Cc;  // p x r

  Eigen::Index order = 0;
  double truncated_tail = 0.0;  // sum of discarded Hankel values
  bool rank_clipped = false;    // requested r hit the numerical rank guard
  bool diagonalization_failed = false;

  Eigen::Index input_dim() const {
    return mode == Mode::dense_real ? B.cols() : Bc.cols();
  }
  Eigen::Index output_dim() const {
    return mode == Mode::dense_real ? C.rows() : Cc.rows();
  }
};

// Square-root balancing projectors. With factors R R^T = P, S S^T = Q and
// the SVD U Sig V^T = S^T R, the projectors are
//   V = R V_{:,:r} Sig^{-1/2},  W = S U_{:,:r} Sig^{-1/2},
// which gives W^T V = I_r and W^T P W = V^T Q V = diag(sig_1..sig_r) in
// exact arithmetic. Requested ranks beyond the numerical rank
// (sig_r <= 1e-14 sig_1) are clipped and flagged.
struct BalancedProjectors {
  Eigen::MatrixXd V;       // n x r
  Eigen::MatrixXd W;       // n x r
  Eigen::VectorXd sigmas;  // all Hankel singular values, descending
  Eigen::Index order = 0;
  bool rank_clipped = false;
};

BalancedProjectors balanced_projectors(const Eigen::MatrixXd& P, const Eigen::MatrixXd& Q,
                                       Eigen::Index r);

// Square-root balanced truncation: [W^T A V, W^T B, C V, D] of order r.
// The projected gramians are exactly balanced (see balanced_projectors);
// the truncated subsystem's own Lyapunov gramians deviate from
// diag(sig_1..sig_r) by a cross-coupling term on the order of the discarded
// tail, since the quadratic A X A^T update mixes in the dropped states.
ReducedSsm balanced_truncation(const DenseSsm& sys, const Eigen::MatrixXd& P,
                               const Eigen::MatrixXd& Q, Eigen::Index r);

struct RankChoice {
  Eigen::Index r = 1;
  bool degenerate = false;  // all-zero sigmas
};

// Smallest r whose cumulative sum reaches fraction * total. fraction = 1
// returns the count of nonzero entries.
RankChoice rank_by_energy(const Eigen::VectorXd& sigmas, double fraction);

struct RankPlan {
  enum class Criterion { energy_fraction, budget };
  Criterion criterion = Criterion::energy_fraction;
  double parameter = 0.0;  // the fraction, or the target mean rank
  std::vector<Eigen::Index> ranks;
  std::vector<double> achieved_energy;  // retained fraction per layer
};

RankPlan allocate_ranks_energy(const HsvReport& report, double fraction);

// Shared-threshold allocation: each layer's values are normalized to sum 1
// and the rank is the count of entries >= gamma (clamped to [1, n]); gamma
// is bisected on [0, 1] until the mean rank meets the target within eps or
// n_max iterations pass. Returns the best plan seen with mean <= target
// (all-ones if the target is below 1).
RankPlan allocate_ranks_bisection(const HsvReport& report, double target_mean_rank,
                                  double eps = 1e-8, int n_max = 100);

// Eigendecomposition T Lam T^{-1} = A with explicit conjugate pairing.
// Falls back to the dense_real input (diagonalization_failed = true) when
// the eigenbasis condition number exceeds 1e8 or the impulse response is
// not preserved to 1e-7.
ReducedSsm diagonalize(const ReducedSsm& reduced);

// Runs the reduced recurrence; u is m x L, returns p x L. For
// diagonal_complex the output is the real part; if max_imag_ratio is given
// it receives the largest relative imaginary residual (should be ~1e-9).
Eigen::MatrixXd simulate_reduced(const ReducedSsm& sys, const Eigen::MatrixXd& u,
                                 double* max_imag_ratio = nullptr);

ImpulseResponse impulse_response_reduced(const ReducedSsm& sys, int ntaps);

}  // namespace ssmkit
