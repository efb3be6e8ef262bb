#include "ssmkit/lti.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>

#include "ssmkit/rng.hpp"

namespace ssmkit {

Eigen::Matrix2d scaled_rotation(double r, double ang) {
  const double c = r * std::cos(ang);
  const double s = r * std::sin(ang);
  Eigen::Matrix2d m;
  m << c, s, -s, c;
  return m;
}

Eigen::VectorXd RotationSsm::radius() const { return radius_raw.array().tanh(); }

Eigen::VectorXd RotationSsm::angle() const {
  return (M_PI * 0.5) * (angle_raw.array().tanh() + 1.0);
}

Eigen::MatrixXd RotationSsm::input_matrix() const {
  const Eigen::Index n = state_dim();
  const Eigen::Index p = io_dim();
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(n, p);
  for (Eigen::Index i = 0; i < blocks(); ++i) B(2 * i, 0) = 1.0;
  if (p > 1) B.rightCols(p - 1) = input_learn;
  return B;
}

void RotationSsm::validate() const {
  if (radius_raw.size() != angle_raw.size())
    throw std::invalid_argument("RotationSsm: radius_raw/angle_raw size mismatch");
  if (radius_raw.size() == 0) throw std::invalid_argument("RotationSsm: empty");
  const Eigen::Index n = state_dim();
  const Eigen::Index p = output.rows();
  if (p < 1) throw std::invalid_argument("RotationSsm: io_dim must be >= 1");
  if (output.cols() != n) throw std::invalid_argument("RotationSsm: output has wrong column count");
  if (input_learn.rows() != n || input_learn.cols() != p - 1)
    throw std::invalid_argument("RotationSsm: input_learn must be n x (p-1)");
  if (feedthrough.size() != p)
    throw std::invalid_argument("RotationSsm: feedthrough size mismatch");
}

void DenseSsm::validate() const {
  if (A.rows() != A.cols()) throw std::invalid_argument("DenseSsm: A not square");
  if (B.rows() != A.rows()) throw std::invalid_argument("DenseSsm: B row mismatch");
  if (C.cols() != A.rows()) throw std::invalid_argument("DenseSsm: C column mismatch");
  if (D.rows() != C.rows() || D.cols() != B.cols())
    throw std::invalid_argument("DenseSsm: D shape mismatch");
}

DenseSsm realize(const RotationSsm& params) {
  params.validate();
  const Eigen::Index q = params.blocks();
  const Eigen::Index n = params.state_dim();
  const Eigen::VectorXd r = params.radius();
  const Eigen::VectorXd a = params.angle();
  DenseSsm sys;
  sys.A = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < q; ++i)
    sys.A.block<2, 2>(2 * i, 2 * i) = scaled_rotation(r[i], a[i]);
  sys.B = params.input_matrix();
  sys.C = params.output;
  sys.D = Eigen::MatrixXd(params.feedthrough.asDiagonal());
  return sys;
}

Eigen::MatrixXd simulate_sequential(const DenseSsm& sys, const Eigen::MatrixXd& u) {
  sys.validate();
  if (u.rows() != sys.input_dim())
    throw std::invalid_argument("simulate_sequential: input rows != m");
  const Eigen::Index L = u.cols();
  Eigen::VectorXd x = Eigen::VectorXd::Zero(sys.state_dim());
  Eigen::MatrixXd y(sys.output_dim(), L);
  for (Eigen::Index k = 0; k < L; ++k) {
    x = sys.A * x + sys.B * u.col(k);
    y.col(k) = sys.C * x + sys.D * u.col(k);
  }
  return y;
}

ImpulseResponse impulse_response(const DenseSsm& sys, int ntaps) {
  sys.validate();
  if (ntaps < 1) throw std::invalid_argument("impulse_response: ntaps must be >= 1");
  ImpulseResponse h;
  h.taps.reserve(ntaps);
  h.taps.push_back(sys.D);
  Eigen::MatrixXd X = sys.B;  // A^{k-1} B
  for (int k = 1; k < ntaps; ++k) {
    h.taps.push_back(sys.C * X);
    X = sys.A * X;
  }
  return h;
}

namespace {

// Internal signal: this canonicalization attempt hit an ill-conditioned step
// and the caller should retry with a perturbed A.
struct RetryCanonicalize : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Solves S1*X - X*S2 = -F for X with S1 (r x r), S2 (c x c), r,c <= 2,
// by vectorizing into an (r*c) x (r*c) linear system.
Eigen::MatrixXd solve_small_sylvester(const Eigen::MatrixXd& S1, const Eigen::MatrixXd& S2,
                                      const Eigen::MatrixXd& F) {
  const Eigen::Index r = S1.rows();
  const Eigen::Index c = S2.rows();
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(r * c, r * c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) {
      for (Eigen::Index k = 0; k < r; ++k) K(j * r + i, j * r + k) += S1(i, k);
      for (Eigen::Index l = 0; l < c; ++l) K(j * r + i, l * r + i) -= S2(l, j);
    }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
  if (lu.rcond() < 1e-12)
    throw RetryCanonicalize("nearly repeated eigenvalue clusters (singular coupling solve)");
  Eigen::VectorXd rhs = -Eigen::Map<const Eigen::VectorXd>(F.data(), r * c);
  Eigen::VectorXd x = lu.solve(rhs);
  return Eigen::Map<const Eigen::MatrixXd>(x.data(), r, c);
}

CanonicalizeResult canonicalize_attempt(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                                        const Eigen::MatrixXd& C, const Eigen::MatrixXd& D,
                                        double perturb_eps, bool perturbed) {
  const Eigen::Index n = A.rows();
  const Eigen::Index p = B.cols();

  Eigen::RealSchur<Eigen::MatrixXd> schur(A);
  if (schur.info() != Eigen::Success) throw RetryCanonicalize("Schur iteration did not converge");
  Eigen::MatrixXd S = schur.matrixT();
  Eigen::MatrixXd Bt = schur.matrixU().transpose() * B;
  Eigen::MatrixXd Ct = C * schur.matrixU();
  const double bscale = std::max(1.0, Bt.norm());

  // Diagonal block layout of the quasi-triangular S.
  std::vector<Eigen::Index> start, bsize;
  for (Eigen::Index i = 0; i < n;) {
    if (i + 1 < n && S(i + 1, i) != 0.0) {
      start.push_back(i);
      bsize.push_back(2);
      i += 2;
    } else {
      start.push_back(i);
      bsize.push_back(1);
      i += 1;
    }
  }
  const std::size_t nb = start.size();

  // Kill the strictly upper block triangle with similarity transforms
  // E = I + X_(i,j): solve S_ii X - X S_jj = -S_ij, then S <- E^{-1} S E,
  // Bt <- E^{-1} Bt, Ct <- Ct E. Columns are processed left to right, so when
  // column j is reached every earlier column is already block-diagonal.
  for (std::size_t j = 1; j < nb; ++j) {
    for (std::size_t i = j; i-- > 0;) {
      const Eigen::MatrixXd Sii = S.block(start[i], start[i], bsize[i], bsize[i]);
      const Eigen::MatrixXd Sjj = S.block(start[j], start[j], bsize[j], bsize[j]);
      const Eigen::MatrixXd F = S.block(start[i], start[j], bsize[i], bsize[j]);
      const Eigen::MatrixXd X = solve_small_sylvester(Sii, Sjj, F);
      S.block(start[i], start[j], bsize[i], bsize[j]).setZero();
      for (std::size_t l = j + 1; l < nb; ++l)
        S.block(start[i], start[l], bsize[i], bsize[l]) -=
            X * S.block(start[j], start[l], bsize[j], bsize[l]);
      Bt.middleRows(start[i], bsize[i]) -= X * Bt.middleRows(start[j], bsize[j]);
      Ct.middleCols(start[j], bsize[j]) += Ct.middleCols(start[i], bsize[i]) * X;
    }
  }

  // Per-block standardization. 2x2 blocks become [a b; -b a] via the real and
  // imaginary parts of an eigenvector; then a scaled plane rotation (which
  // commutes with [a b; -b a]) maps the block's first-input column to [1,0].
  // 1x1 blocks are scaled so the first-input entry is exactly 1 and padded
  // with a decoupled second state.
  CanonicalizeResult res;
  res.perturbed = perturbed;
  RotationSsm& out = res.params;
  out.radius_raw.resize(nb);
  out.angle_raw.resize(nb);
  Eigen::MatrixXd Bfull = Eigen::MatrixXd::Zero(2 * nb, p);
  Eigen::MatrixXd Cfull = Eigen::MatrixXd::Zero(p, 2 * nb);
  Eigen::VectorXd radius(nb), angle(nb);

  for (std::size_t bi = 0; bi < nb; ++bi) {
    const Eigen::Index i0 = start[bi];
    if (bsize[bi] == 2) {
      const Eigen::Matrix2d M = S.block<2, 2>(i0, i0);
      const double a = 0.5 * (M(0, 0) + M(1, 1));
      const double hd = 0.5 * (M(0, 0) - M(1, 1));
      const double disc = hd * hd + M(0, 1) * M(1, 0);
      if (disc >= 0.0)
        throw RetryCanonicalize("2x2 diagonal block with real eigenvalues");
      const double b = std::sqrt(-disc);
      Eigen::Vector2cd v;
      if (std::abs(M(0, 1)) >= std::abs(M(1, 0)))
        v << std::complex<double>(M(0, 1), 0.0), std::complex<double>(a - M(0, 0), b);
      else
        v << std::complex<double>(a - M(1, 1), b), std::complex<double>(M(1, 0), 0.0);
      v.normalize();
      Eigen::Matrix2d T;
      T.col(0) = v.real();
      T.col(1) = v.imag();
      if (std::abs(T.determinant()) < 1e-12)
        throw RetryCanonicalize("degenerate eigenvector basis in 2x2 block");
      const Eigen::Matrix2d Tinv = T.inverse();
      Eigen::Matrix2d target;
      target << a, b, -b, a;
      if ((Tinv * M * T - target).cwiseAbs().maxCoeff() > 1e-8 * (1.0 + std::abs(a) + b))
        throw RetryCanonicalize("2x2 block standardization lost accuracy");

      Eigen::MatrixXd Brows = Tinv * Bt.middleRows(i0, 2);
      Eigen::MatrixXd Ccols = Ct.middleCols(i0, 2) * T;

      const double g = std::hypot(Brows(0, 0), Brows(1, 0));
      if (g < perturb_eps * bscale)
        throw RetryCanonicalize("block unreachable from first input channel");
      const double gc = Brows(0, 0) / g;
      const double gs = Brows(1, 0) / g;
      Eigen::Matrix2d Gi;  // (1/g) * plane rotation: maps the column to [1,0]
      Gi << gc / g, gs / g, -gs / g, gc / g;
      Eigen::Matrix2d Gf;  // its inverse
      Gf << g * gc, -g * gs, g * gs, g * gc;
      Brows = Gi * Brows;
      Brows(0, 0) = 1.0;
      Brows(1, 0) = 0.0;
      Ccols = Ccols * Gf;

      radius[bi] = std::hypot(a, b);
      angle[bi] = std::atan2(b, a);  // in (0, pi) since b > 0
      Bfull.middleRows(2 * bi, 2) = Brows;
      Cfull.middleCols(2 * bi, 2) = Ccols;
    } else {
      const double lam = S(i0, i0);
      const double bs = Bt(i0, 0);
      if (std::abs(bs) < perturb_eps * bscale)
        throw RetryCanonicalize("real mode unreachable from first input channel");
      radius[bi] = lam;  // may be negative; angle 0 keeps the block diagonal
      angle[bi] = 0.0;
      Bfull.row(2 * bi) = Bt.row(i0) / bs;
      Bfull(2 * bi, 0) = 1.0;
      Cfull.col(2 * bi) = Ct.col(i0) * bs;
      res.padded_blocks.push_back(static_cast<Eigen::Index>(bi));
    }
  }

  // Invert the activations. Angles snap to the representable range; the
  // clamp margins keep atanh finite while changing the effective value by
  // far less than round-trip tolerances.
  for (std::size_t bi = 0; bi < nb; ++bi) {
    const double rmax = 1.0 - 1e-12;
    out.radius_raw[static_cast<Eigen::Index>(bi)] =
        std::atanh(std::clamp(radius[bi], -rmax, rmax));
    const double t = std::clamp(2.0 * angle[bi] / M_PI - 1.0, -(1.0 - 1e-16), 1.0 - 1e-16);
    out.angle_raw[static_cast<Eigen::Index>(bi)] = std::atanh(t);
  }
  out.input_learn = Bfull.rightCols(p - 1);
  out.output = Cfull;
  out.feedthrough = D.diagonal();
  out.validate();
  return res;
}

}  // namespace

CanonicalizeResult to_rotation_form(const DenseSsm& sys, double perturb_eps) {
  sys.validate();
  if (sys.input_dim() != sys.output_dim())
    throw std::invalid_argument("to_rotation_form: requires m == p");
  const Eigen::Index n = sys.state_dim();
  const Eigen::Index p = sys.input_dim();
  if (n < 1 || p < 1) throw std::invalid_argument("to_rotation_form: empty system");

  const double dscale = 1.0 + sys.D.cwiseAbs().maxCoeff();
  for (Eigen::Index i = 0; i < p; ++i)
    for (Eigen::Index j = 0; j < p; ++j)
      if (i != j && std::abs(sys.D(i, j)) > 1e-12 * dscale)
        throw std::invalid_argument("to_rotation_form: D must be diagonal");

  const Eigen::VectorXcd ev = sys.A.eigenvalues();
  if (!(ev.cwiseAbs().maxCoeff() < 1.0))
    throw std::invalid_argument("to_rotation_form: A is not strictly stable");

  Rng prng(0x5eedf0c5u);  // fixed stream: the retry is deterministic
  std::string first_error;
  for (int attempt = 0; attempt < 2; ++attempt) {
    Eigen::MatrixXd Awork = sys.A;
    if (attempt > 0) {
      Awork += prng.gaussian_matrix(n, n, 0.0, perturb_eps);
      // Keep the perturbed matrix strictly stable.
      const double sr = Awork.eigenvalues().cwiseAbs().maxCoeff();
      if (sr >= 1.0) Awork *= (1.0 - 2.0 * perturb_eps) / sr;
    }
    try {
      return canonicalize_attempt(Awork, sys.B, sys.C, sys.D, perturb_eps, attempt > 0);
    } catch (const RetryCanonicalize& e) {
      if (attempt == 0)
        first_error = e.what();
      else
        throw std::runtime_error(std::string("to_rotation_form failed (") + first_error +
                                 "); perturbation retry also failed (" + e.what() + ")");
    }
  }
  throw std::logic_error("unreachable");
}

}  // namespace ssmkit
