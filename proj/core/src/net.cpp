#include "ssmkit/net.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "ssmkit/gramians.hpp"
#include "ssmkit/hankel.hpp"
#include "ssmkit/scan.hpp"

namespace ssmkit {

namespace {

constexpr double kNormEps = 1e-5;
constexpr double kBnMomentum = 0.1;

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

inline double gelu_deriv(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  return cdf + x * pdf;
}

inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

void check_finite(const Eigen::MatrixXd& m, const char* where) {
  if (!m.allFinite())
    throw NumericError(std::string("non-finite values in ") + where);
}

// Forward through one SSM layer body, dispatching on the layer kind.
// Reduced layers hoist the input/output maps into whole-sequence GEMMs and
// keep only the r x r (or diagonal) state update in the time loop.
Eigen::MatrixXd apply_ssm(const SsmLayer& layer, const Eigen::MatrixXd& u, Eigen::Index batch,
                          int workers, Eigen::MatrixXd* states) {
  if (layer.kind == SsmLayer::Kind::rotation)
    return scan_batch(layer.rot, u, batch, workers, states);

  const ReducedSsm& red = layer.red;
  const Eigen::Index T = u.rows() / batch;
  const Eigen::Index r = red.order;
  // Truncation leaves the feedthrough untouched, so a layer whose feedthrough
  // was diagonal still has a diagonal D; don't pay a dense p x p GEMM for it.
  const bool d_diag = red.D.rows() == red.D.cols() && red.D.isDiagonal(0.0);
  const auto add_feedthrough = [&](Eigen::MatrixXd& y) {
    if (d_diag)
      y.array() += u.array().rowwise() * red.D.diagonal().transpose().array();
    else
      y += u * red.D.transpose();
  };
  if (red.mode == ReducedSsm::Mode::dense_real) {
    Eigen::MatrixXd BU = u * red.B.transpose();  // (T*batch) x r
    Eigen::MatrixXd X(u.rows(), r);
    Eigen::MatrixXd xs = Eigen::MatrixXd::Zero(batch, r);
    const Eigen::MatrixXd At = red.A.transpose();
    for (Eigen::Index t = 0; t < T; ++t) {
      xs = xs * At + BU.middleRows(t * batch, batch);
      X.middleRows(t * batch, batch) = xs;
    }
    Eigen::MatrixXd y = X * red.C.transpose();
    add_feedthrough(y);
    if (states) *states = std::move(X);
    return y;
  }
  // diagonal_complex: the state and maps are genuinely complex, but the input
  // is real, so split the complex GEMMs into real ones (half the multiplies,
  // and the output only ever needs the real part).
  Eigen::MatrixXd BUre = u * red.Bc.real().transpose();
  Eigen::MatrixXd BUim = u * red.Bc.imag().transpose();
  Eigen::MatrixXd Xre(u.rows(), r), Xim(u.rows(), r);
  Eigen::MatrixXd xre = Eigen::MatrixXd::Zero(batch, r);
  Eigen::MatrixXd xim = Eigen::MatrixXd::Zero(batch, r);
  const Eigen::RowVectorXd lre = red.lambda.real().transpose();
  const Eigen::RowVectorXd lim = red.lambda.imag().transpose();
  Eigen::MatrixXd tmp(batch, r);
  for (Eigen::Index t = 0; t < T; ++t) {
    tmp = xre;
    xre.array() = tmp.array().rowwise() * lre.array() - xim.array().rowwise() * lim.array();
    xim.array() = tmp.array().rowwise() * lim.array() + xim.array().rowwise() * lre.array();
    xre += BUre.middleRows(t * batch, batch);
    xim += BUim.middleRows(t * batch, batch);
    Xre.middleRows(t * batch, batch) = xre;
    Xim.middleRows(t * batch, batch) = xim;
  }
  Eigen::MatrixXd y = Xre * red.Cc.real().transpose();
  y.noalias() -= Xim * red.Cc.imag().transpose();
  add_feedthrough(y);
  return y;
}

}  // namespace

void TrainConfig::validate() const {
  if (depth < 1) throw std::invalid_argument("config: depth must be >= 1");
  if (state_dim < 2 || state_dim % 2 != 0)
    throw std::invalid_argument("config: state_dim must be even and >= 2");
  if (model_dim < 1) throw std::invalid_argument("config: model_dim must be >= 1");
  if (input_dim < 1) throw std::invalid_argument("config: input_dim must be >= 1");
  if (classes < 2) throw std::invalid_argument("config: classes must be >= 2");
  if (!(dropout >= 0.0 && dropout < 1.0))
    throw std::invalid_argument("config: dropout must be in [0, 1)");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("config: learning rate must be > 0");
  if (batch < 1) throw std::invalid_argument("config: batch must be >= 1");
  if (epochs < 0) throw std::invalid_argument("config: epochs must be >= 0");
  if (weight_decay < 0.0) throw std::invalid_argument("config: weight decay must be >= 0");
  if (reg_mag < 0.0) throw std::invalid_argument("config: reg magnitude must be >= 0");
  if (threads < 1) throw std::invalid_argument("config: threads must be >= 1");
}

bool SequenceModel::compressed() const {
  for (const auto& l : layers)
    if (l.kind == SsmLayer::Kind::reduced) return true;
  return false;
}

SequenceModel init_model(const TrainConfig& cfg) {
  cfg.validate();
  SequenceModel model;
  model.cfg = cfg;
  Rng rng(cfg.seed);
  const Eigen::Index p = cfg.model_dim;
  const Eigen::Index n = cfg.state_dim;
  const Eigen::Index q = n / 2;
  const Eigen::Index d = cfg.input_dim;

  model.enc_w = rng.gaussian_matrix(p, d, 0.0, 1.0 / std::sqrt(static_cast<double>(d)));
  model.enc_b = Eigen::VectorXd::Zero(p);

  const double b_std = cfg.alt_b_init
                           ? 1.0 / std::sqrt(static_cast<double>(n + p))
                           : 1.0 / std::sqrt(static_cast<double>(n) * n + static_cast<double>(p) * p);
  for (int l = 0; l < cfg.depth; ++l) {
    SsmLayer layer;
    layer.norm_gain = Eigen::VectorXd::Ones(p);
    layer.norm_bias = Eigen::VectorXd::Zero(p);
    layer.rot.radius_raw = rng.gaussian_vector(q, 1.5, 0.25);
    layer.rot.angle_raw = rng.gaussian_vector(q, 0.0, 1.0);
    layer.rot.input_learn = rng.gaussian_matrix(n, p - 1, 0.0, b_std);
    layer.rot.output = rng.gaussian_matrix(p, n, 0.0, b_std);
    layer.rot.feedthrough = rng.gaussian_vector(p, 0.0, 1.0);
    layer.gate_w = rng.gaussian_matrix(p, p, 0.0, 1.0 / std::sqrt(static_cast<double>(p)));
    layer.bn_mean = Eigen::VectorXd::Zero(p);
    layer.bn_var = Eigen::VectorXd::Ones(p);
    model.layers.push_back(std::move(layer));
  }

  model.dec_w = rng.gaussian_matrix(cfg.classes, p, 0.0, 1.0 / std::sqrt(static_cast<double>(p)));
  model.dec_b = Eigen::VectorXd::Zero(cfg.classes);
  return model;
}

Eigen::MatrixXd forward(SequenceModel& model, const Eigen::MatrixXd& inputs, Eigen::Index batch,
                        bool train_mode, Rng* rng, ForwardCache* cache, int workers) {
  const Eigen::Index p = model.cfg.model_dim;
  if (inputs.cols() != model.cfg.input_dim)
    throw std::invalid_argument("forward: input feature dim mismatch");
  if (batch < 1 || inputs.rows() % batch != 0)
    throw std::invalid_argument("forward: rows not a multiple of batch");
  const Eigen::Index T = inputs.rows() / batch;
  const bool use_ln = model.cfg.layer_norm;
  const double rate = train_mode ? model.cfg.dropout : 0.0;
  if (rate > 0.0 && !rng) throw std::invalid_argument("forward: dropout requires an rng");

  if (cache) {
    cache->enc_in = inputs;
    cache->layers.assign(model.layers.size(), {});
  }

  Eigen::MatrixXd z = inputs * model.enc_w.transpose();
  z.rowwise() += model.enc_b.transpose();
  check_finite(z, "encoder output");
  if (cache) cache->enc_out = z;

  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    SsmLayer& layer = model.layers[li];
    ForwardCache::Layer* lc = cache ? &cache->layers[li] : nullptr;
    if (lc) lc->zin = z;

    // Normalization.
    Eigen::MatrixXd nhat;
    Eigen::VectorXd mu, inv_std;
    if (use_ln) {
      mu = z.rowwise().mean();
      Eigen::MatrixXd ctr = z.colwise() - mu;
      Eigen::VectorXd var = ctr.array().square().rowwise().mean();
      inv_std = (var.array() + kNormEps).rsqrt().matrix();
      nhat = (ctr.array().colwise() * inv_std.array()).matrix();
    } else {
      Eigen::RowVectorXd bmu, bvar;
      if (train_mode) {
        bmu = z.colwise().mean();
        Eigen::MatrixXd ctr = z.rowwise() - bmu;
        bvar = ctr.array().square().colwise().mean();
        layer.bn_mean = (1.0 - kBnMomentum) * layer.bn_mean + kBnMomentum * bmu.transpose();
        layer.bn_var = (1.0 - kBnMomentum) * layer.bn_var + kBnMomentum * bvar.transpose();
      } else {
        bmu = layer.bn_mean.transpose();
        bvar = layer.bn_var.transpose();
      }
      mu = bmu.transpose();
      inv_std = (bvar.transpose().array() + kNormEps).rsqrt().matrix();
      nhat = ((z.rowwise() - bmu).array().rowwise() * inv_std.transpose().array()).matrix();
    }
    Eigen::MatrixXd normed =
        (nhat.array().rowwise() * layer.norm_gain.transpose().array()).matrix();
    normed.rowwise() += layer.norm_bias.transpose();

    // SSM.
    Eigen::MatrixXd yssm =
        apply_ssm(layer, normed, batch, workers, lc ? &lc->states : nullptr);
    check_finite(yssm, "ssm output");

    // gelu(y) (.) sigmoid(W gelu(y)), then dropout, then residual add.
    Eigen::MatrixXd gel = yssm.unaryExpr([](double v) { return gelu(v); });
    Eigen::MatrixXd sig = (gel * layer.gate_w.transpose())
                              .unaryExpr([](double v) { return sigmoid(v); });
    Eigen::MatrixXd gated = gel.cwiseProduct(sig);

    Eigen::MatrixXd dropmask;
    if (rate > 0.0) {
      dropmask.resize(gated.rows(), gated.cols());
      const double scale = 1.0 / (1.0 - rate);
      for (Eigen::Index j = 0; j < dropmask.cols(); ++j)
        for (Eigen::Index i = 0; i < dropmask.rows(); ++i)
          dropmask(i, j) = rng->uniform() < rate ? 0.0 : scale;
      gated = gated.cwiseProduct(dropmask);
    }

    if (lc) {
      lc->nhat = std::move(nhat);
      lc->mu = std::move(mu);
      lc->inv_std = std::move(inv_std);
      lc->normed = std::move(normed);
      lc->yssm = std::move(yssm);
      lc->gel = std::move(gel);
      lc->sig = std::move(sig);
      lc->gated = gated;
      lc->dropmask = std::move(dropmask);
    }

    if (model.cfg.residual)
      z += gated;
    else
      z = std::move(gated);
    check_finite(z, "block output");
  }

  // Mean pool over time, then decode.
  Eigen::MatrixXd pooled = Eigen::MatrixXd::Zero(batch, p);
  for (Eigen::Index t = 0; t < T; ++t) pooled += z.middleRows(t * batch, batch);
  pooled /= static_cast<double>(T);
  Eigen::MatrixXd logits = pooled * model.dec_w.transpose();
  logits.rowwise() += model.dec_b.transpose();
  check_finite(logits, "logits");
  if (cache) {
    cache->pooled = pooled;
    cache->logits = logits;
  }
  return logits;
}

ModelGrad make_grad_like(const SequenceModel& model) {
  ModelGrad g;
  g.enc_w = Eigen::MatrixXd::Zero(model.enc_w.rows(), model.enc_w.cols());
  g.enc_b = Eigen::VectorXd::Zero(model.enc_b.size());
  for (const auto& layer : model.layers) {
    ModelGrad::Layer gl;
    gl.norm_gain = Eigen::VectorXd::Zero(layer.norm_gain.size());
    gl.norm_bias = Eigen::VectorXd::Zero(layer.norm_bias.size());
    if (layer.kind == SsmLayer::Kind::rotation) {
      gl.radius_raw = Eigen::VectorXd::Zero(layer.rot.radius_raw.size());
      gl.angle_raw = Eigen::VectorXd::Zero(layer.rot.angle_raw.size());
      gl.input_learn =
          Eigen::MatrixXd::Zero(layer.rot.input_learn.rows(), layer.rot.input_learn.cols());
      gl.output = Eigen::MatrixXd::Zero(layer.rot.output.rows(), layer.rot.output.cols());
      gl.feedthrough = Eigen::VectorXd::Zero(layer.rot.feedthrough.size());
    }
    gl.gate_w = Eigen::MatrixXd::Zero(layer.gate_w.rows(), layer.gate_w.cols());
    g.layers.push_back(std::move(gl));
  }
  g.dec_w = Eigen::MatrixXd::Zero(model.dec_w.rows(), model.dec_w.cols());
  g.dec_b = Eigen::VectorXd::Zero(model.dec_b.size());
  return g;
}

LossBreakdown loss_and_grad(SequenceModel& model, const Eigen::MatrixXd& inputs,
                            const std::vector<int>& labels, Eigen::Index batch, Rng* dropout_rng,
                            ModelGrad& grad, int workers) {
  if (model.compressed())
    throw std::invalid_argument("loss_and_grad: compressed models are not trainable");
  const Eigen::Index B = batch;
  if (static_cast<Eigen::Index>(labels.size()) != B)
    throw std::invalid_argument("loss_and_grad: label count != batch");
  const Eigen::Index T = inputs.rows() / B;
  const Eigen::Index p = model.cfg.model_dim;
  const bool use_ln = model.cfg.layer_norm;

  ForwardCache cache;
  forward(model, inputs, B, /*train_mode=*/true, dropout_rng, &cache, workers);

  LossBreakdown loss;
  // Softmax cross entropy, batch mean.
  Eigen::MatrixXd dlogits(B, model.cfg.classes);
  for (Eigen::Index b = 0; b < B; ++b) {
    const Eigen::RowVectorXd row = cache.logits.row(b);
    const double mx = row.maxCoeff();
    const Eigen::RowVectorXd ex = (row.array() - mx).exp();
    const double denom = ex.sum();
    loss.ce += (std::log(denom) + mx) - row[labels[b]];
    dlogits.row(b) = ex / denom;
    dlogits(b, labels[b]) -= 1.0;
  }
  loss.ce /= static_cast<double>(B);
  dlogits /= static_cast<double>(B);

  grad.dec_w = dlogits.transpose() * cache.pooled;
  grad.dec_b = dlogits.colwise().sum().transpose();

  const Eigen::MatrixXd dpooled = dlogits * model.dec_w;
  Eigen::MatrixXd dz(inputs.rows(), p);
  const Eigen::MatrixXd slab = dpooled / static_cast<double>(T);
  for (Eigen::Index t = 0; t < T; ++t) dz.middleRows(t * B, B) = slab;

  for (std::size_t li = model.layers.size(); li-- > 0;) {
    SsmLayer& layer = model.layers[li];
    ForwardCache::Layer& lc = cache.layers[li];
    ModelGrad::Layer& gl = grad.layers[li];

    Eigen::MatrixXd dgated = lc.dropmask.size() > 0 ? dz.cwiseProduct(lc.dropmask).eval() : dz;

    // gated = gel (.) sig, sig = sigmoid(gel W^T).
    Eigen::MatrixXd dgel = dgated.cwiseProduct(lc.sig);
    Eigen::MatrixXd dpre =
        dgated.cwiseProduct(lc.gel).cwiseProduct(lc.sig).cwiseProduct(
            (1.0 - lc.sig.array()).matrix());
    gl.gate_w = dpre.transpose() * lc.gel;
    dgel += dpre * layer.gate_w;
    Eigen::MatrixXd dyssm =
        dgel.cwiseProduct(lc.yssm.unaryExpr([](double v) { return gelu_deriv(v); }));

    ScanBackward sb = scan_backward(layer.rot, lc.normed, B, lc.states, dyssm);
    gl.radius_raw = sb.radius_raw;
    gl.angle_raw = sb.angle_raw;
    gl.input_learn = sb.input_learn;
    gl.output = sb.output;
    gl.feedthrough = sb.feedthrough;

    // Normalization backward.
    Eigen::MatrixXd& dnormed = sb.u_bar;
    gl.norm_bias = dnormed.colwise().sum().transpose();
    gl.norm_gain = dnormed.cwiseProduct(lc.nhat).colwise().sum().transpose();
    Eigen::MatrixXd dnhat =
        (dnormed.array().rowwise() * layer.norm_gain.transpose().array()).matrix();
    Eigen::MatrixXd dx;
    if (use_ln) {
      const Eigen::VectorXd m1 = dnhat.rowwise().mean();
      const Eigen::VectorXd m2 = dnhat.cwiseProduct(lc.nhat).rowwise().mean();
      dx = dnhat;
      dx.colwise() -= m1;
      dx -= (lc.nhat.array().colwise() * m2.array()).matrix();
      dx = (dx.array().colwise() * lc.inv_std.array()).matrix();
    } else {
      const Eigen::RowVectorXd m1 = dnhat.colwise().mean();
      const Eigen::RowVectorXd m2 = dnhat.cwiseProduct(lc.nhat).colwise().mean();
      dx = dnhat;
      dx.rowwise() -= m1;
      dx -= (lc.nhat.array().rowwise() * m2.array()).matrix();
      dx = (dx.array().rowwise() * lc.inv_std.transpose().array()).matrix();
    }

    if (model.cfg.residual)
      dz += dx;
    else
      dz = std::move(dx);
    check_finite(dz, "backward block");
  }

  grad.enc_w = dz.transpose() * cache.enc_in;
  grad.enc_b = dz.colwise().sum().transpose();

  // Hankel sum penalty: value and analytic gradient per layer.
  if (model.cfg.reg_mag > 0.0) {
    const LyapRoute route = model.cfg.naive_reg ? LyapRoute::naive : LyapRoute::blocked;
    for (std::size_t li = 0; li < model.layers.size(); ++li) {
      auto [value, rg] = hankel_sum_and_gradient(model.layers[li].rot, route, workers);
      loss.reg += value;
      ModelGrad::Layer& gl = grad.layers[li];
      gl.radius_raw += model.cfg.reg_mag * rg.radius_raw;
      gl.angle_raw += model.cfg.reg_mag * rg.angle_raw;
      gl.input_learn += model.cfg.reg_mag * rg.input_learn;
      gl.output += model.cfg.reg_mag * rg.output;
    }
  }

  loss.total = loss.ce + model.cfg.reg_mag * loss.reg;
  if (!std::isfinite(loss.total)) throw NumericError("non-finite loss");
  return loss;
}

std::vector<ParamRef> collect_params(SequenceModel& model) {
  std::vector<ParamRef> out;
  const auto add = [&out](double* ptr, Eigen::Index size, bool decayed) {
    out.push_back({ptr, size, decayed});
  };
  add(model.enc_w.data(), model.enc_w.size(), true);
  add(model.enc_b.data(), model.enc_b.size(), true);
  for (auto& layer : model.layers) {
    add(layer.norm_gain.data(), layer.norm_gain.size(), false);
    add(layer.norm_bias.data(), layer.norm_bias.size(), false);
    if (layer.kind == SsmLayer::Kind::rotation) {
      add(layer.rot.radius_raw.data(), layer.rot.radius_raw.size(), false);
      add(layer.rot.angle_raw.data(), layer.rot.angle_raw.size(), false);
      add(layer.rot.input_learn.data(), layer.rot.input_learn.size(), false);
      add(layer.rot.output.data(), layer.rot.output.size(), false);
      add(layer.rot.feedthrough.data(), layer.rot.feedthrough.size(), true);
    }
    add(layer.gate_w.data(), layer.gate_w.size(), true);
  }
  add(model.dec_w.data(), model.dec_w.size(), true);
  add(model.dec_b.data(), model.dec_b.size(), true);
  return out;
}

std::vector<ParamRef> collect_grads(ModelGrad& grad) {
  std::vector<ParamRef> out;
  const auto add = [&out](double* ptr, Eigen::Index size, bool decayed) {
    out.push_back({ptr, size, decayed});
  };
  add(grad.enc_w.data(), grad.enc_w.size(), true);
  add(grad.enc_b.data(), grad.enc_b.size(), true);
  for (auto& layer : grad.layers) {
    add(layer.norm_gain.data(), layer.norm_gain.size(), false);
    add(layer.norm_bias.data(), layer.norm_bias.size(), false);
    if (layer.radius_raw.size() > 0) {
      add(layer.radius_raw.data(), layer.radius_raw.size(), false);
      add(layer.angle_raw.data(), layer.angle_raw.size(), false);
      add(layer.input_learn.data(), layer.input_learn.size(), false);
      add(layer.output.data(), layer.output.size(), false);
      add(layer.feedthrough.data(), layer.feedthrough.size(), true);
    }
    add(layer.gate_w.data(), layer.gate_w.size(), true);
  }
  add(grad.dec_w.data(), grad.dec_w.size(), true);
  add(grad.dec_b.data(), grad.dec_b.size(), true);
  return out;
}

void adamw_step(SequenceModel& model, const ModelGrad& grad, AdamState& state, double lr,
                double weight_decay, double beta1, double beta2, double eps) {
  auto params = collect_params(model);
  auto grads = collect_grads(const_cast<ModelGrad&>(grad));
  if (params.size() != grads.size())
    throw std::invalid_argument("adamw_step: gradient/model structure mismatch");
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i] = Eigen::VectorXd::Zero(params[i].size);
      state.v[i] = Eigen::VectorXd::Zero(params[i].size);
    }
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].size != grads[i].size)
      throw std::invalid_argument("adamw_step: tensor size mismatch");
    Eigen::Map<Eigen::VectorXd> w(params[i].data, params[i].size);
    Eigen::Map<const Eigen::VectorXd> g(grads[i].data, grads[i].size);
    Eigen::VectorXd& m = state.m[i];
    Eigen::VectorXd& v = state.v[i];
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g.cwiseProduct(g).eval();
    const Eigen::VectorXd mhat = m / bc1;
    const Eigen::VectorXd vhat = v / bc2;
    if (params[i].decayed && weight_decay > 0.0) w -= (lr * weight_decay) * w;
    w -= lr * (mhat.array() / (vhat.array().sqrt() + eps)).matrix();
    if (!w.allFinite()) throw NumericError("non-finite parameter after optimizer step");
  }
}

namespace {

// Gathers sample indices into the time-major packed layout.
Eigen::MatrixXd gather_batch(const Dataset& data, const std::vector<Eigen::Index>& idx) {
  const Eigen::Index B = static_cast<Eigen::Index>(idx.size());
  const Eigen::Index T = data.T;
  Eigen::MatrixXd out(T * B, data.input_dim());
  for (Eigen::Index t = 0; t < T; ++t)
    for (Eigen::Index b = 0; b < B; ++b) out.row(t * B + b) = data.inputs.row(idx[b] * T + t);
  return out;
}

}  // namespace

std::vector<EpochMetrics> train(SequenceModel& model, const Dataset& train_set,
                                const Dataset& eval_set, AdamState& opt, const EpochHook& hook) {
  const TrainConfig& cfg = model.cfg;
  cfg.validate();
  if (train_set.size() == 0) throw std::invalid_argument("train: empty dataset");
  if (train_set.input_dim() != cfg.input_dim)
    throw std::invalid_argument("train: dataset feature dim != config input_dim");

  Rng order_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  Rng drop_rng(cfg.seed ^ 0xc2b2ae3d27d4eb4full);
  std::vector<Eigen::Index> indices(train_set.size());
  std::iota(indices.begin(), indices.end(), Eigen::Index{0});

  std::vector<EpochMetrics> log;
  ModelGrad grad = make_grad_like(model);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    order_rng.shuffle(indices);
    double sum_loss = 0.0, sum_ce = 0.0, sum_reg = 0.0;
    Eigen::Index seen = 0;
    for (Eigen::Index pos = 0; pos < train_set.size(); pos += cfg.batch) {
      const Eigen::Index B = std::min<Eigen::Index>(cfg.batch, train_set.size() - pos);
      std::vector<Eigen::Index> idx(indices.begin() + pos, indices.begin() + pos + B);
      const Eigen::MatrixXd batch_in = gather_batch(train_set, idx);
      std::vector<int> batch_labels(B);
      for (Eigen::Index b = 0; b < B; ++b) batch_labels[b] = train_set.labels[idx[b]];
      const LossBreakdown lb =
          loss_and_grad(model, batch_in, batch_labels, B, &drop_rng, grad, cfg.threads);
      adamw_step(model, grad, opt, cfg.learning_rate, cfg.weight_decay);
      sum_loss += lb.total * static_cast<double>(B);
      sum_ce += lb.ce * static_cast<double>(B);
      sum_reg += lb.reg * static_cast<double>(B);
      seen += B;
      // Stability is structural; cheap to assert all the same.
      for (const auto& layer : model.layers)
        if (layer.kind == SsmLayer::Kind::rotation &&
            layer.rot.radius().cwiseAbs().maxCoeff() >= 1.0)
          throw NumericError("spectral radius reached 1 (impossible by construction)");
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = sum_loss / static_cast<double>(seen);
    m.ce = sum_ce / static_cast<double>(seen);
    m.reg = sum_reg / static_cast<double>(seen);
    m.eval_acc = eval_set.size() > 0 ? evaluate(model, eval_set, cfg.threads) : 0.0;
    m.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.push_back(m);
    if (hook) hook(epoch, model, m);
  }
  return log;
}

double evaluate(SequenceModel& model, const Dataset& data, int workers,
                std::vector<double>* batch_seconds) {
  if (data.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
  const Eigen::Index nbatch = model.cfg.batch;
  Eigen::Index correct = 0;
  for (Eigen::Index pos = 0; pos < data.size(); pos += nbatch) {
    const Eigen::Index B = std::min<Eigen::Index>(nbatch, data.size() - pos);
    std::vector<Eigen::Index> idx(B);
    std::iota(idx.begin(), idx.end(), pos);
    const Eigen::MatrixXd batch_in = gather_batch(data, idx);
    const auto t0 = std::chrono::steady_clock::now();
    const Eigen::MatrixXd logits =
        forward(model, batch_in, B, /*train_mode=*/false, nullptr, nullptr, workers);
    if (batch_seconds)
      batch_seconds->push_back(
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    for (Eigen::Index b = 0; b < B; ++b) {
      Eigen::Index arg;
      logits.row(b).maxCoeff(&arg);
      if (static_cast<int>(arg) == data.labels[pos + b]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

SequenceModel compress_model(const SequenceModel& model, const RankPlan& plan,
                             bool diagonalize_layers) {
  if (plan.ranks.size() != model.layers.size())
    throw std::invalid_argument("compress_model: plan layer count mismatch");
  SequenceModel out = model;
  for (std::size_t li = 0; li < out.layers.size(); ++li) {
    SsmLayer& layer = out.layers[li];
    if (layer.kind != SsmLayer::Kind::rotation)
      throw std::invalid_argument("compress_model: layer already compressed");
    const DenseSsm sys = realize(layer.rot);
    const GramianPair g = gramians_blocked(layer.rot, model.cfg.threads);
    ReducedSsm red = balanced_truncation(sys, g.ctrl, g.obs, plan.ranks[li]);
    if (diagonalize_layers) red = diagonalize(red);
    layer.kind = SsmLayer::Kind::reduced;
    layer.red = std::move(red);
    layer.rot = RotationSsm{};
  }
  return out;
}

}  // namespace ssmkit
