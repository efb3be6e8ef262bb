#include "ssmkit/scan.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "ssmkit/threading.hpp"

namespace ssmkit {

namespace {

// In-place x <- A(radius-cos, radius-sin) x on one state vector, where
// cvec[i] = r_i cos(a_i), svec[i] = r_i sin(a_i).
inline void apply_blocks(const Eigen::VectorXd& cvec, const Eigen::VectorXd& svec,
                         Eigen::VectorXd& x) {
  for (Eigen::Index i = 0; i < cvec.size(); ++i) {
    const double x0 = x[2 * i];
    const double x1 = x[2 * i + 1];
    x[2 * i] = cvec[i] * x0 + svec[i] * x1;
    x[2 * i + 1] = -svec[i] * x0 + cvec[i] * x1;
  }
}

// Row-sample layout: X is (rows x n); applies the same map to every row,
// column pair by column pair (X <- X A^T).
inline void apply_blocks_rows(const Eigen::VectorXd& cvec, const Eigen::VectorXd& svec,
                              Eigen::Ref<Eigen::MatrixXd> X, Eigen::VectorXd& tmp) {
  for (Eigen::Index i = 0; i < cvec.size(); ++i) {
    tmp = X.col(2 * i);
    X.col(2 * i) = cvec[i] * tmp + svec[i] * X.col(2 * i + 1);
    X.col(2 * i + 1) = -svec[i] * tmp + cvec[i] * X.col(2 * i + 1);
  }
}

// Adjoint direction: X <- X A (i.e. x_bar <- A^T x_bar per row).
inline void apply_blocks_rows_adj(const Eigen::VectorXd& cvec, const Eigen::VectorXd& svec,
                                  Eigen::Ref<Eigen::MatrixXd> X, Eigen::VectorXd& tmp) {
  for (Eigen::Index i = 0; i < cvec.size(); ++i) {
    tmp = X.col(2 * i);
    X.col(2 * i) = cvec[i] * tmp - svec[i] * X.col(2 * i + 1);
    X.col(2 * i + 1) = svec[i] * tmp + cvec[i] * X.col(2 * i + 1);
  }
}

struct ChunkRange {
  Eigen::Index begin, end;
};

std::vector<ChunkRange> chunk_ranges(Eigen::Index L, int workers) {
  const Eigen::Index nchunks = std::max<Eigen::Index>(1, std::min<Eigen::Index>(workers, L));
  std::vector<ChunkRange> r(nchunks);
  const Eigen::Index base = L / nchunks, extra = L % nchunks;
  Eigen::Index pos = 0;
  for (Eigen::Index c = 0; c < nchunks; ++c) {
    const Eigen::Index len = base + (c < extra ? 1 : 0);
    r[c] = {pos, pos + len};
    pos += len;
  }
  return r;
}

}  // namespace

ScanElement scan_identity(Eigen::Index q) {
  return {Eigen::VectorXd::Ones(q), Eigen::VectorXd::Zero(q), Eigen::VectorXd::Zero(2 * q)};
}

ScanElement combine(const ScanElement& a, const ScanElement& b) {
  const Eigen::Index q = a.radius.size();
  if (b.radius.size() != q || a.angle.size() != q || b.angle.size() != q ||
      a.state.size() != 2 * q || b.state.size() != 2 * q)
    throw std::invalid_argument("combine: element dimension mismatch");
  ScanElement out;
  out.radius = a.radius.cwiseProduct(b.radius);
  out.angle = a.angle + b.angle;
  out.state.resize(2 * q);
  for (Eigen::Index i = 0; i < q; ++i) {
    const double c = b.radius[i] * std::cos(b.angle[i]);
    const double s = b.radius[i] * std::sin(b.angle[i]);
    out.state[2 * i] = c * a.state[2 * i] + s * a.state[2 * i + 1] + b.state[2 * i];
    out.state[2 * i + 1] = -s * a.state[2 * i] + c * a.state[2 * i + 1] + b.state[2 * i + 1];
  }
  return out;
}

Eigen::MatrixXd scan_sequence(const RotationSsm& params, const Eigen::MatrixXd& u, int workers) {
  params.validate();
  const Eigen::Index p = params.io_dim();
  const Eigen::Index q = params.blocks();
  const Eigen::Index L = u.cols();
  if (u.rows() != p) throw std::invalid_argument("scan_sequence: input rows != p");
  if (L < 1) throw std::invalid_argument("scan_sequence: empty sequence");

  const Eigen::VectorXd r = params.radius();
  const Eigen::VectorXd a = params.angle();
  Eigen::VectorXd cvec(q), svec(q);
  for (Eigen::Index i = 0; i < q; ++i) {
    cvec[i] = r[i] * std::cos(a[i]);
    svec[i] = r[i] * std::sin(a[i]);
  }
  const Eigen::MatrixXd B = params.input_matrix();
  const Eigen::MatrixXd BU = B * u;  // per-step input injections, one GEMM

  const auto ranges = chunk_ranges(L, workers);
  const auto nchunks = static_cast<Eigen::Index>(ranges.size());
  Eigen::MatrixXd X(2 * q, L);

  if (nchunks == 1) {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(2 * q);
    for (Eigen::Index k = 0; k < L; ++k) {
      apply_blocks(cvec, svec, x);
      x += BU.col(k);
      X.col(k) = x;
    }
  } else {
    // Pass 1: per-chunk summaries under combine.
    std::vector<ScanElement> carry(nchunks);
    parallel_for(nchunks, workers, [&](std::size_t c) {
      ScanElement acc = scan_identity(q);
      for (Eigen::Index k = ranges[c].begin; k < ranges[c].end; ++k)
        acc = combine(acc, {r, a, BU.col(k)});
      carry[c] = std::move(acc);
    });
    // Exclusive scan of the summaries (sequential, nchunks elements).
    std::vector<ScanElement> prefix(nchunks);
    prefix[0] = scan_identity(q);
    for (Eigen::Index c = 1; c < nchunks; ++c) prefix[c] = combine(prefix[c - 1], carry[c - 1]);
    // Pass 2: replay each chunk from its prefix state.
    parallel_for(nchunks, workers, [&](std::size_t c) {
      Eigen::VectorXd x = prefix[c].state;
      for (Eigen::Index k = ranges[c].begin; k < ranges[c].end; ++k) {
        apply_blocks(cvec, svec, x);
        x += BU.col(k);
        X.col(k) = x;
      }
    });
  }

  Eigen::MatrixXd y = params.output * X;
  y += params.feedthrough.asDiagonal() * u;
  return y;
}

Eigen::MatrixXd scan_batch(const RotationSsm& params, const Eigen::MatrixXd& u,
                           Eigen::Index batch, int workers, Eigen::MatrixXd* states_out) {
  params.validate();
  const Eigen::Index p = params.io_dim();
  const Eigen::Index q = params.blocks();
  const Eigen::Index n = 2 * q;
  if (u.cols() != p) throw std::invalid_argument("scan_batch: input cols != p");
  if (batch < 1 || u.rows() % batch != 0)
    throw std::invalid_argument("scan_batch: rows not a multiple of batch");
  const Eigen::Index T = u.rows() / batch;

  const Eigen::VectorXd r = params.radius();
  const Eigen::VectorXd a = params.angle();
  Eigen::VectorXd cvec(q), svec(q);
  for (Eigen::Index i = 0; i < q; ++i) {
    cvec[i] = r[i] * std::cos(a[i]);
    svec[i] = r[i] * std::sin(a[i]);
  }

  Eigen::MatrixXd X(u.rows(), n);          // state trajectory, row = (t, b)
  Eigen::MatrixXd BU = u * params.input_matrix().transpose();

  const auto ranges = chunk_ranges(T, workers);
  const auto nchunks = static_cast<Eigen::Index>(ranges.size());

  struct BatchCarry {
    Eigen::VectorXd radius, angle;
    Eigen::MatrixXd state;  // batch x n
  };
  const auto combine_carry = [&](const BatchCarry& A0, const BatchCarry& B0) {
    BatchCarry out;
    out.radius = A0.radius.cwiseProduct(B0.radius);
    out.angle = A0.angle + B0.angle;
    out.state = A0.state;
    Eigen::VectorXd tmp(batch);
    Eigen::VectorXd cc(q), ss(q);
    for (Eigen::Index i = 0; i < q; ++i) {
      cc[i] = B0.radius[i] * std::cos(B0.angle[i]);
      ss[i] = B0.radius[i] * std::sin(B0.angle[i]);
    }
    apply_blocks_rows(cc, ss, out.state, tmp);
    out.state += B0.state;
    return out;
  };
  const auto identity_carry = [&]() {
    return BatchCarry{Eigen::VectorXd::Ones(q), Eigen::VectorXd::Zero(q),
                      Eigen::MatrixXd::Zero(batch, n)};
  };

  const auto replay = [&](Eigen::Index c, const Eigen::MatrixXd& seed) {
    Eigen::MatrixXd xs = seed;  // batch x n
    Eigen::VectorXd tmp(batch);
    for (Eigen::Index t = ranges[c].begin; t < ranges[c].end; ++t) {
      apply_blocks_rows(cvec, svec, xs, tmp);
      xs += BU.middleRows(t * batch, batch);
      X.middleRows(t * batch, batch) = xs;
    }
  };

  if (nchunks == 1) {
    replay(0, Eigen::MatrixXd::Zero(batch, n));
  } else {
    std::vector<BatchCarry> carry(nchunks);
    parallel_for(nchunks, workers, [&](std::size_t c) {
      BatchCarry acc = identity_carry();
      for (Eigen::Index t = ranges[c].begin; t < ranges[c].end; ++t)
        acc = combine_carry(acc, {r, a, BU.middleRows(t * batch, batch)});
      carry[c] = std::move(acc);
    });
    std::vector<BatchCarry> prefix(nchunks);
    prefix[0] = identity_carry();
    for (Eigen::Index c = 1; c < nchunks; ++c)
      prefix[c] = combine_carry(prefix[c - 1], carry[c - 1]);
    parallel_for(nchunks, workers, [&](std::size_t c) { replay(c, prefix[c].state); });
  }

  Eigen::MatrixXd y = X * params.output.transpose();
  y += u * params.feedthrough.asDiagonal();
  if (states_out) *states_out = std::move(X);
  return y;
}

ScanBackward scan_backward(const RotationSsm& params, const Eigen::MatrixXd& u,
                           Eigen::Index batch, const Eigen::MatrixXd& states,
                           const Eigen::MatrixXd& y_bar) {
  params.validate();
  const Eigen::Index p = params.io_dim();
  const Eigen::Index q = params.blocks();
  const Eigen::Index n = 2 * q;
  if (u.rows() != states.rows() || u.rows() != y_bar.rows() || u.rows() % batch != 0)
    throw std::invalid_argument("scan_backward: row mismatch");
  const Eigen::Index T = u.rows() / batch;

  const Eigen::VectorXd r = params.radius();
  const Eigen::VectorXd a = params.angle();
  Eigen::VectorXd cvec(q), svec(q);
  for (Eigen::Index i = 0; i < q; ++i) {
    cvec[i] = r[i] * std::cos(a[i]);
    svec[i] = r[i] * std::sin(a[i]);
  }

  Eigen::MatrixXd Xbar(u.rows(), n);
  Eigen::MatrixXd xb = Eigen::MatrixXd::Zero(batch, n);  // running adjoint state
  Eigen::VectorXd tmp(batch);
  std::vector<Eigen::Matrix2d> Abar(q, Eigen::Matrix2d::Zero());
  for (Eigen::Index t = T; t-- > 0;) {
    // xbar_t = ybar_t C + A^T xbar_{t+1}  (row layout: right-multiply by A).
    apply_blocks_rows_adj(cvec, svec, xb, tmp);
    xb += y_bar.middleRows(t * batch, batch) * params.output;
    Xbar.middleRows(t * batch, batch) = xb;
    if (t > 0) {
      const auto xprev = states.middleRows((t - 1) * batch, batch);
      for (Eigen::Index i = 0; i < q; ++i)
        Abar[i] += xb.middleCols(2 * i, 2).transpose() * xprev.middleCols(2 * i, 2);
    }
  }

  ScanBackward g;
  const Eigen::MatrixXd Bbar = Xbar.transpose() * u;  // n x p
  g.input_learn = Bbar.rightCols(p - 1);
  g.output = y_bar.transpose() * states;
  g.feedthrough = (y_bar.array() * u.array()).colwise().sum().matrix().transpose();
  g.u_bar = Xbar * params.input_matrix();
  g.u_bar += y_bar * params.feedthrough.asDiagonal();

  g.radius_raw.resize(q);
  g.angle_raw.resize(q);
  const Eigen::VectorXd rt = params.radius_raw.array().tanh();
  const Eigen::VectorXd at = params.angle_raw.array().tanh();
  for (Eigen::Index i = 0; i < q; ++i) {
    const double c = std::cos(a[i]);
    const double s = std::sin(a[i]);
    Eigen::Matrix2d dAdr;
    dAdr << c, s, -s, c;
    Eigen::Matrix2d dAda;
    dAda << -s, c, -c, -s;
    dAda *= r[i];
    g.radius_raw[i] = (Abar[i].array() * dAdr.array()).sum() * (1.0 - rt[i] * rt[i]);
    g.angle_raw[i] =
        (Abar[i].array() * dAda.array()).sum() * 0.5 * M_PI * (1.0 - at[i] * at[i]);
  }
  return g;
}

}  // namespace ssmkit
