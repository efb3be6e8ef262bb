#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssmkit/compress.hpp"
#include "ssmkit/lti.hpp"
#include "ssmkit/rng.hpp"

namespace ssmkit {

// Raised when a non-finite activation, loss, or gradient is detected; the
// CLI maps it to its own exit code.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  int depth = 2;       // number of SSM blocks
  int state_dim = 32;  // n (even)
  int model_dim = 32;  // p
  int input_dim = 1;
  int classes = 10;
  double dropout = 0.1;
  double learning_rate = 1e-3;
  int batch = 50;
  int epochs = 10;
  double weight_decay = 0.05;
  double reg_mag = 0.0;  // weight of the Hankel sum penalty; 0 disables it
  std::uint64_t seed = 0;

  bool layer_norm = true;  // false selects batch normalization
  bool residual = true;
  bool alt_b_init = false;  // 1/sqrt(n+p) stds instead of 1/sqrt(n^2+p^2)
  bool naive_reg = false;   // penalty gradient via the dense Lyapunov oracle
  int threads = 1;

  void validate() const;  // throws std::invalid_argument
};

struct SsmLayer {
  enum class Kind { rotation, reduced };
  Kind kind = Kind::rotation;
  RotationSsm rot;  // trainable form
  ReducedSsm red;   // after compression

  Eigen::VectorXd norm_gain, norm_bias;  // p
  Eigen::MatrixXd gate_w;                // p x p
  // Batch-norm running statistics (unused under layer norm).
  Eigen::VectorXd bn_mean, bn_var;

  Eigen::Index io_dim() const { return norm_gain.size(); }
};

struct SequenceModel {
  TrainConfig cfg;
  Eigen::MatrixXd enc_w;  // p x input_dim
  Eigen::VectorXd enc_b;  // p
  std::vector<SsmLayer> layers;
  Eigen::MatrixXd dec_w;  // classes x p
  Eigen::VectorXd dec_b;  // classes

  bool compressed() const;
};

SequenceModel init_model(const TrainConfig& cfg);

// Sequences are packed time-major exactly as in scan_batch: row t*batch + b
// of `inputs` is step t of sample b.
struct ForwardCache {
  Eigen::MatrixXd enc_in, enc_out;
  struct Layer {
    Eigen::MatrixXd zin;            // block input
    Eigen::MatrixXd nhat;           // normalized, pre gain/bias
    Eigen::VectorXd mu, inv_std;    // per-row (layer norm) or per-feature (batch norm)
    Eigen::MatrixXd normed;         // after gain/bias
    Eigen::MatrixXd states;         // scan states
    Eigen::MatrixXd yssm;           // SSM output
    Eigen::MatrixXd gel, sig;       // gelu(y), sigmoid(gate_w gelu(y))
    Eigen::MatrixXd gated;
    Eigen::MatrixXd dropmask;       // inverted-dropout mask (empty in eval)
  };
  std::vector<Layer> layers;
  Eigen::MatrixXd pooled;  // batch x p
  Eigen::MatrixXd logits;  // batch x classes
};

// train_mode enables dropout (mask drawn from rng) and batch statistics;
// keep_cache controls whether intermediates are stored for backward.
Eigen::MatrixXd forward(SequenceModel& model, const Eigen::MatrixXd& inputs, Eigen::Index batch,
                        bool train_mode, Rng* rng, ForwardCache* cache, int workers = 1);

// Gradients mirror the model structure; only fields that are trainable in
// rotation mode are populated.
struct ModelGrad {
  Eigen::MatrixXd enc_w;
  Eigen::VectorXd enc_b;
  struct Layer {
    Eigen::VectorXd norm_gain, norm_bias;
    Eigen::VectorXd radius_raw, angle_raw;
    Eigen::MatrixXd input_learn, output;
    Eigen::VectorXd feedthrough;
    Eigen::MatrixXd gate_w;
  };
  std::vector<Layer> layers;
  Eigen::MatrixXd dec_w;
  Eigen::VectorXd dec_b;
};

struct LossBreakdown {
  double total = 0.0;
  double ce = 0.0;
  double reg = 0.0;  // unweighted Hankel sum; total = ce + reg_mag * reg
};

LossBreakdown loss_and_grad(SequenceModel& model, const Eigen::MatrixXd& inputs,
                            const std::vector<int>& labels, Eigen::Index batch, Rng* dropout_rng,
                            ModelGrad& grad, int workers = 1);

struct Dataset {
  Eigen::MatrixXd inputs;  // (samples * T) x input_dim, row s*T + t
  std::vector<int> labels;
  Eigen::Index T = 0;
  int classes = 0;

  Eigen::Index size() const { return static_cast<Eigen::Index>(labels.size()); }
  Eigen::Index input_dim() const { return inputs.cols(); }
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0, ce = 0.0, reg = 0.0;
  double eval_acc = 0.0;
  double wall_time_s = 0.0;
};

struct AdamState {
  // First/second moment buffers, one pair per parameter tensor, in the
  // fixed traversal order of collect_params.
  std::vector<Eigen::VectorXd> m, v;
  std::int64_t step = 0;
};

// Fixed traversal of trainable tensors (data pointer + size + decay flag);
// the same order is used by the optimizer and the checkpoint format.
struct ParamRef {
  double* data;
  Eigen::Index size;
  bool decayed;
};
std::vector<ParamRef> collect_params(SequenceModel& model);
std::vector<ParamRef> collect_grads(ModelGrad& grad);

ModelGrad make_grad_like(const SequenceModel& model);

void adamw_step(SequenceModel& model, const ModelGrad& grad, AdamState& state, double lr,
                double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);

using EpochHook = std::function<void(int epoch, const SequenceModel&, const EpochMetrics&)>;

std::vector<EpochMetrics> train(SequenceModel& model, const Dataset& train_set,
                                const Dataset& eval_set, AdamState& opt,
                                const EpochHook& hook = {});

double evaluate(SequenceModel& model, const Dataset& data, int workers = 1,
                std::vector<double>* batch_seconds = nullptr);

// Replaces every rotation layer by its balanced-truncated reduction (rank
// from the plan), optionally diagonalized. Non-SSM parameters are copied
// unchanged.
SequenceModel compress_model(const SequenceModel& model, const RankPlan& plan,
                             bool diagonalize_layers = false);

}  // namespace ssmkit
