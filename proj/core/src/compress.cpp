#include "ssmkit/compress.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "ssmkit/gramians.hpp"

namespace ssmkit {

BalancedProjectors balanced_projectors(const Eigen::MatrixXd& P, const Eigen::MatrixXd& Q,
                                       Eigen::Index r) {
  if (P.rows() != Q.rows())
    throw std::invalid_argument("balanced_projectors: gramian size mismatch");
  if (r < 1) throw std::invalid_argument("balanced_projectors: r must be >= 1");

  const Eigen::MatrixXd R = cholesky_psd(P);
  const Eigen::MatrixXd S = cholesky_psd(Q);
  Eigen::BDCSVD<Eigen::MatrixXd> svd(S.transpose() * R,
                                     Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd sig = svd.singularValues();
  if (sig.size() == 0 || sig[0] <= 0.0)
    throw std::runtime_error("balanced_projectors: system has no reachable-observable part");

  Eigen::Index rmax = 0;
  while (rmax < sig.size() && sig[rmax] > 1e-14 * sig[0]) ++rmax;

  BalancedProjectors out;
  if (r > rmax) {
    r = rmax;
    out.rank_clipped = true;
  }
  const Eigen::VectorXd scale = sig.head(r).cwiseSqrt().cwiseInverse();
  out.V = R * svd.matrixV().leftCols(r) * scale.asDiagonal();
  out.W = S * svd.matrixU().leftCols(r) * scale.asDiagonal();
  out.sigmas = sig;
  out.order = r;
  return out;
}

ReducedSsm balanced_truncation(const DenseSsm& sys, const Eigen::MatrixXd& P,
                               const Eigen::MatrixXd& Q, Eigen::Index r) {
  sys.validate();
  const Eigen::Index n = sys.state_dim();
  if (P.rows() != n || Q.rows() != n)
    throw std::invalid_argument("balanced_truncation: gramian size mismatch");

  const BalancedProjectors pr = balanced_projectors(P, Q, r);
  r = pr.order;
  const Eigen::VectorXd& sig = pr.sigmas;

  ReducedSsm out;
  out.rank_clipped = pr.rank_clipped;
  out.mode = ReducedSsm::Mode::dense_real;
  out.A = pr.W.transpose() * sys.A * pr.V;
  out.B = pr.W.transpose() * sys.B;
  out.C = sys.C * pr.V;
  out.D = sys.D;
  out.order = r;
  out.truncated_tail = sig.tail(sig.size() - r).sum();

  const double sr = out.A.eigenvalues().cwiseAbs().maxCoeff();
  if (sr > 1.0 + 1e-10)
    throw std::runtime_error(
        "balanced_truncation: reduced system unstable; gramians are inconsistent with A");
  return out;
}

RankChoice rank_by_energy(const Eigen::VectorXd& sigmas, double fraction) {
  const Eigen::Index n = sigmas.size();
  if (n == 0) throw std::invalid_argument("rank_by_energy: empty");
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw std::invalid_argument("rank_by_energy: fraction must be in (0, 1]");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (sigmas[i] < 0.0) throw std::invalid_argument("rank_by_energy: negative entry");
    if (i > 0 && sigmas[i] > sigmas[i - 1] * (1.0 + 1e-12) + 1e-300)
      throw std::invalid_argument("rank_by_energy: not sorted descending");
  }
  // Accumulate once; the final cumulative value is the total, so the
  // fraction = 1 case terminates exactly at the last nonzero entry.
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) total += sigmas[i];
  if (total <= 0.0) return {1, true};
  double cum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    cum += sigmas[i];
    if (cum >= fraction * total) return {i + 1, false};
  }
  return {n, false};
}

namespace {

double retained_fraction(const Eigen::VectorXd& sigmas, Eigen::Index r) {
  const double total = sigmas.sum();
  if (total <= 0.0) return 1.0;
  return sigmas.head(r).sum() / total;
}

}  // namespace

RankPlan allocate_ranks_energy(const HsvReport& report, double fraction) {
  RankPlan plan;
  plan.criterion = RankPlan::Criterion::energy_fraction;
  plan.parameter = fraction;
  for (const auto& s : report.layer_sigmas) {
    const RankChoice c = rank_by_energy(s, fraction);
    plan.ranks.push_back(c.r);
    plan.achieved_energy.push_back(retained_fraction(s, c.r));
  }
  return plan;
}

RankPlan allocate_ranks_bisection(const HsvReport& report, double target_mean_rank, double eps,
                                  int n_max) {
  const auto L = static_cast<Eigen::Index>(report.layer_sigmas.size());
  if (L == 0) throw std::invalid_argument("allocate_ranks_bisection: no layers");
  std::vector<Eigen::VectorXd> norm(L);
  for (Eigen::Index l = 0; l < L; ++l) {
    const double total = report.layer_sigmas[l].sum();
    norm[l] = total > 0.0 ? (report.layer_sigmas[l] / total).eval() : report.layer_sigmas[l];
  }

  const auto ranks_at = [&](double gamma) {
    std::vector<Eigen::Index> r(L);
    for (Eigen::Index l = 0; l < L; ++l) {
      Eigen::Index cnt = 0;
      while (cnt < norm[l].size() && norm[l][cnt] >= gamma) ++cnt;
      r[l] = std::clamp<Eigen::Index>(cnt, 1, norm[l].size());
    }
    return r;
  };
  const auto mean_of = [&](const std::vector<Eigen::Index>& r) {
    double s = 0.0;
    for (auto v : r) s += static_cast<double>(v);
    return s / static_cast<double>(L);
  };

  std::vector<Eigen::Index> best = ranks_at(1.0);  // coarsest plan, mean >= 1
  double best_mean = mean_of(best);
  bool have_feasible = best_mean <= target_mean_rank + eps;

  double gmin = 0.0, gmax = 1.0;
  for (int it = 0; it < n_max; ++it) {
    const double g = 0.5 * (gmin + gmax);
    const auto r = ranks_at(g);
    const double m = mean_of(r);
    if (m <= target_mean_rank + eps && (!have_feasible || m > best_mean)) {
      best = r;
      best_mean = m;
      have_feasible = true;
    }
    if (std::abs(m - target_mean_rank) <= eps) break;
    if (m > target_mean_rank)
      gmin = g;  // too many kept: raise the threshold
    else
      gmax = g;
  }

  RankPlan plan;
  plan.criterion = RankPlan::Criterion::budget;
  plan.parameter = target_mean_rank;
  plan.ranks = best;
  for (Eigen::Index l = 0; l < L; ++l)
    plan.achieved_energy.push_back(retained_fraction(report.layer_sigmas[l], best[l]));
  return plan;
}

ReducedSsm diagonalize(const ReducedSsm& in) {
  if (in.mode != ReducedSsm::Mode::dense_real)
    throw std::invalid_argument("diagonalize: input must be dense_real");
  const Eigen::Index r = in.order;

  const auto fallback = [&]() {
    ReducedSsm copy = in;
    copy.diagonalization_failed = true;
    return copy;
  };

  Eigen::EigenSolver<Eigen::MatrixXd> es(in.A);
  if (es.info() != Eigen::Success) return fallback();
  Eigen::VectorXcd lam = es.eigenvalues();
  Eigen::MatrixXcd T = es.eigenvectors();

  {
    Eigen::JacobiSVD<Eigen::MatrixXcd> tsvd(T);
    const double smin = tsvd.singularValues().minCoeff();
    const double smax = tsvd.singularValues().maxCoeff();
    if (!(smin > 0.0) || smax / smin > 1e8) return fallback();
  }

  // Explicit conjugate pairing: snap near-real eigenvalues to the real axis
  // and rewrite each complex eigenpair's partner as an exact conjugate.
  const double tol = 1e-10;
  std::vector<bool> used(r, false);
  for (Eigen::Index i = 0; i < r; ++i) {
    if (used[i]) continue;
    const double mag = 1.0 + std::abs(lam[i]);
    if (std::abs(lam[i].imag()) <= tol * mag) {
      lam[i] = std::complex<double>(lam[i].real(), 0.0);
      // Rotate the eigenvector's global phase to make it (nearly) real.
      Eigen::Index imax;
      T.col(i).cwiseAbs().maxCoeff(&imax);
      const std::complex<double> ph = T(imax, i) / std::abs(T(imax, i));
      Eigen::VectorXcd v = T.col(i) / ph;
      v = v.real().cast<std::complex<double>>();
      if (v.norm() == 0.0) return fallback();
      T.col(i) = v.normalized();
      used[i] = true;
      continue;
    }
    Eigen::Index match = -1;
    double bestdist = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = i + 1; j < r; ++j) {
      if (used[j]) continue;
      const double d = std::abs(lam[j] - std::conj(lam[i]));
      if (d < bestdist) {
        bestdist = d;
        match = j;
      }
    }
    if (match < 0 || bestdist > 1e-8 * mag) return fallback();
    lam[match] = std::conj(lam[i]);
    T.col(match) = T.col(i).conjugate();
    used[i] = used[match] = true;
  }

  ReducedSsm out;
  out.mode = ReducedSsm::Mode::diagonal_complex;
  out.lambda = lam;
  Eigen::PartialPivLU<Eigen::MatrixXcd> lu(T);
  out.Bc = lu.solve(in.B.cast<std::complex<double>>());
  out.Cc = in.C.cast<std::complex<double>>() * T;
  out.D = in.D;
  out.order = r;
  out.truncated_tail = in.truncated_tail;
  out.rank_clipped = in.rank_clipped;

  // Self-check: the change of basis must preserve the impulse response.
  const int taps = 128;
  const ImpulseResponse ha = impulse_response_reduced(in, taps);
  const ImpulseResponse hb = impulse_response_reduced(out, taps);
  double scale = 0.0, err = 0.0;
  for (int k = 0; k < taps; ++k) {
    scale = std::max(scale, ha.taps[k].cwiseAbs().maxCoeff());
    err = std::max(err, (ha.taps[k] - hb.taps[k]).cwiseAbs().maxCoeff());
  }
  if (err > 1e-7 * std::max(1.0, scale)) return fallback();
  return out;
}

Eigen::MatrixXd simulate_reduced(const ReducedSsm& sys, const Eigen::MatrixXd& u,
                                 double* max_imag_ratio) {
  const Eigen::Index L = u.cols();
  if (u.rows() != sys.input_dim())
    throw std::invalid_argument("simulate_reduced: input rows mismatch");
  if (sys.mode == ReducedSsm::Mode::dense_real) {
    if (max_imag_ratio) *max_imag_ratio = 0.0;
    DenseSsm d{sys.A, sys.B, sys.C, sys.D};
    return simulate_sequential(d, u);
  }
  const Eigen::Index p = sys.Cc.rows();
  Eigen::VectorXcd x = Eigen::VectorXcd::Zero(sys.order);
  Eigen::MatrixXd y(p, L);
  double ynorm = 0.0, imax = 0.0;
  for (Eigen::Index k = 0; k < L; ++k) {
    x = sys.lambda.cwiseProduct(x) + sys.Bc * u.col(k);
    const Eigen::VectorXcd yc = sys.Cc * x + sys.D.cast<std::complex<double>>() * u.col(k);
    y.col(k) = yc.real();
    ynorm = std::max(ynorm, yc.real().cwiseAbs().maxCoeff());
    imax = std::max(imax, yc.imag().cwiseAbs().maxCoeff());
  }
  if (max_imag_ratio) *max_imag_ratio = imax / std::max(1e-300, ynorm);
  return y;
}

ImpulseResponse impulse_response_reduced(const ReducedSsm& sys, int ntaps) {
  if (sys.mode == ReducedSsm::Mode::dense_real) {
    DenseSsm d{sys.A, sys.B, sys.C, sys.D};
    return impulse_response(d, ntaps);
  }
  ImpulseResponse h;
  h.taps.push_back(sys.D);
  Eigen::MatrixXcd X = sys.Bc;
  for (int k = 1; k < ntaps; ++k) {
    h.taps.push_back((sys.Cc * X).real());
    X = sys.lambda.asDiagonal() * X;
  }
  return h;
}

}  // namespace ssmkit
