#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "ssmkit/checkpoint.hpp"
#include "ssmkit/compress.hpp"
#include "ssmkit/dataset.hpp"
#include "ssmkit/gramians.hpp"
#include "ssmkit/hankel.hpp"
#include "ssmkit/net.hpp"
#include "ssmkit/report.hpp"
#include "ssmkit/rng.hpp"
#include "ssmkit/scan.hpp"

namespace fs = std::filesystem;
using namespace ssmkit;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct DataFlags {
  std::string data_dir;           // IDX directory; empty selects the generator
  long train_count = 0;           // 0 = all
  long eval_count = 0;
  long synth_T = 100;
  long synth_train = 2000;
  long synth_eval = 500;
  double synth_noise = 0.4;
};

void add_data_flags(CLI::App* cmd, DataFlags& d) {
  cmd->add_option("--data-dir", d.data_dir,
                  "directory with IDX files (train-images-idx3-ubyte, ...); "
                  "omit to use the built-in generator");
  cmd->add_option("--train-count", d.train_count, "subset size for the train split (0 = all)");
  cmd->add_option("--eval-count", d.eval_count, "subset size for the eval split (0 = all)");
  cmd->add_option("--synth-seq-len", d.synth_T, "generator sequence length");
  cmd->add_option("--synth-train", d.synth_train, "generator train split size");
  cmd->add_option("--synth-eval", d.synth_eval, "generator eval split size");
  cmd->add_option("--synth-noise", d.synth_noise, "generator noise stddev");
}

io::SplitPair load_splits(const DataFlags& d, std::uint64_t seed, int classes) {
  io::SplitPair pair;
  if (!d.data_dir.empty()) {
    const fs::path dir(d.data_dir);
    pair.train = io::load_idx((dir / "train-images-idx3-ubyte").string(),
                              (dir / "train-labels-idx1-ubyte").string());
    pair.eval = io::load_idx((dir / "t10k-images-idx3-ubyte").string(),
                             (dir / "t10k-labels-idx1-ubyte").string());
  } else {
    io::SynthConfig sc;
    sc.classes = classes;
    sc.T = d.synth_T;
    sc.train_count = d.synth_train;
    sc.eval_count = d.synth_eval;
    sc.noise = d.synth_noise;
    sc.seed = seed;
    pair = io::make_synthetic(sc);
  }
  if (d.train_count > 0 && d.train_count < pair.train.size())
    pair.train = io::subset(pair.train, d.train_count, seed + 1);
  if (d.eval_count > 0 && d.eval_count < pair.eval.size())
    pair.eval = io::subset(pair.eval, d.eval_count, seed + 2);
  io::normalize_train_eval(pair.train, pair.eval);
  return pair;
}

void apply_preset(TrainConfig& cfg, const std::string& name) {
  if (name == "smnist-toy") {
    cfg.depth = 2;
    cfg.state_dim = 32;
    cfg.model_dim = 32;
    cfg.epochs = 10;
    cfg.batch = 50;
    cfg.learning_rate = 1e-3;
    cfg.dropout = 0.1;
    cfg.weight_decay = 0.05;
  } else if (name == "smnist-paper") {
    cfg.depth = 4;
    cfg.state_dim = 128;
    cfg.model_dim = 128;
    cfg.epochs = 250;
    cfg.batch = 50;
    cfg.learning_rate = 1e-3;
    cfg.dropout = 0.1;
    cfg.weight_decay = 0.1;
    cfg.reg_mag = 1e-5;
  } else {
    throw CLI::ValidationError("--preset", "unknown preset: " + name);
  }
}

std::vector<RotationSsm> rotation_layers(const SequenceModel& model) {
  std::vector<RotationSsm> out;
  out.reserve(model.layers.size());
  for (const auto& layer : model.layers) {
    if (layer.kind != SsmLayer::Kind::rotation)
      throw io::DataError("checkpoint is already compressed; expected trainable layers");
    out.push_back(layer.rot);
  }
  return out;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  return v[mid];
}

template <typename Fn>
double median_seconds(int reps, Fn&& fn) {
  std::vector<double> times;
  times.reserve(reps);
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return median(std::move(times));
}

// ---------------------------------------------------------------- train ---

int cmd_train(const TrainConfig& cfg, const DataFlags& data, const std::string& out_dir,
              int hsv_every) {
  cfg.validate();
  fs::create_directories(out_dir);
  const fs::path out(out_dir);

  io::SplitPair splits = load_splits(data, cfg.seed, cfg.classes);
  if (splits.train.input_dim() != cfg.input_dim)
    throw io::DataError("dataset feature dim does not match --input-dim");

  SequenceModel model = init_model(cfg);
  AdamState opt;

  const auto hsv_path = [&](int epoch1) {
    char name[64];
    std::snprintf(name, sizeof(name), "hsv_epoch_%03d.csv", epoch1);
    return (out / name).string();
  };
  const EpochHook hook = [&](int epoch, const SequenceModel& m, const EpochMetrics& em) {
    std::printf("epoch %d/%d loss %.6f ce %.6f reg %.6f acc %.4f (%.1fs)\n", epoch + 1,
                cfg.epochs, em.train_loss, em.ce, em.reg, em.eval_acc, em.wall_time_s);
    std::fflush(stdout);
    if ((epoch + 1) % hsv_every == 0 || epoch + 1 == cfg.epochs)
      io::write_hsv_csv(hsv_path(epoch + 1), make_hsv_report(rotation_layers(m), cfg.threads));
  };

  const std::vector<EpochMetrics> log = train(model, splits.train, splits.eval, opt, hook);
  io::write_metrics_csv((out / "metrics.csv").string(), log);

  io::Checkpoint ckpt;
  ckpt.model = std::move(model);
  ckpt.has_optimizer = true;
  ckpt.optimizer = std::move(opt);
  // Streams recorded at their seeded origin; training always replays from
  // epoch 0, so these identify the run rather than resume mid-run.
  ckpt.order_rng = Rng(cfg.seed ^ 0x9e3779b97f4a7c15ull).serialize();
  ckpt.dropout_rng = Rng(cfg.seed ^ 0xc2b2ae3d27d4eb4full).serialize();
  io::save_checkpoint(ckpt, (out / "model.ckpt").string());
  std::printf("wrote %s\n", (out / "model.ckpt").c_str());
  return kExitOk;
}

// ------------------------------------------------------------- evaluate ---

int cmd_evaluate(const std::string& ckpt_path, const DataFlags& data, int threads) {
  io::Checkpoint ckpt = io::load_checkpoint(ckpt_path);
  io::SplitPair splits = load_splits(data, ckpt.model.cfg.seed, ckpt.model.cfg.classes);
  std::vector<double> batch_seconds;
  const double acc = evaluate(ckpt.model, splits.eval, threads, &batch_seconds);
  std::printf("accuracy=%.6f median_batch_seconds=%.6g batches=%zu\n", acc,
              median(batch_seconds), batch_seconds.size());
  return kExitOk;
}

// ------------------------------------------------------------- compress ---

int cmd_compress(const std::string& ckpt_path, const std::string& out_dir, double energy,
                 double trunc_ratio, double budget, bool diagonalize_flag, int threads) {
  io::Checkpoint ckpt = io::load_checkpoint(ckpt_path);
  const std::vector<RotationSsm> layers = rotation_layers(ckpt.model);
  const HsvReport report = make_hsv_report(layers, threads);

  RankPlan plan;
  if (energy > 0.0) {
    plan = allocate_ranks_energy(report, energy);
  } else {
    double target = budget;
    if (trunc_ratio >= 0.0) {
      const double n = static_cast<double>(ckpt.model.cfg.state_dim);
      target = n * (1.0 - trunc_ratio);
    }
    plan = allocate_ranks_bisection(report, target);
  }

  SequenceModel compressed = compress_model(ckpt.model, plan, diagonalize_flag);

  fs::create_directories(out_dir);
  const fs::path out(out_dir);
  std::vector<io::CertRow> rows;
  for (std::size_t l = 0; l < report.layer_sigmas.size(); ++l) {
    io::CertRow row;
    row.layer = static_cast<int>(l);
    row.r = plan.ranks[l];
    const Eigen::VectorXd& s = report.layer_sigmas[l];
    row.tail_sum = s.size() > plan.ranks[l] ? s.tail(s.size() - plan.ranks[l]).sum() : 0.0;
    row.bound_constant = 2.0 * row.tail_sum;
    rows.push_back(row);
  }
  io::write_certificate_csv((out / "certificate.csv").string(), rows);

  io::Checkpoint cc;
  cc.model = std::move(compressed);
  cc.order_rng = ckpt.order_rng;
  cc.dropout_rng = ckpt.dropout_rng;
  io::save_checkpoint(cc, (out / "compressed.ckpt").string());

  double mean_rank = 0.0;
  for (const auto r : plan.ranks) mean_rank += static_cast<double>(r);
  mean_rank /= static_cast<double>(plan.ranks.empty() ? 1 : plan.ranks.size());
  std::printf("wrote %s (mean rank %.2f)\n", (out / "compressed.ckpt").c_str(), mean_rank);
  return kExitOk;
}

// ----------------------------------------------------------- hsv-report ---

int cmd_hsv_report(const std::string& ckpt_path, const std::string& out_dir, int threads) {
  io::Checkpoint ckpt = io::load_checkpoint(ckpt_path);
  const HsvReport report = make_hsv_report(rotation_layers(ckpt.model), threads);
  fs::create_directories(out_dir);
  const fs::path out(out_dir);
  io::write_hsv_csv((out / "hsv.csv").string(), report);
  io::write_hsv_svg((out / "hsv.svg").string(), report);
  std::printf("wrote %s\n", (out / "hsv.csv").c_str());
  return kExitOk;
}

// ------------------------------------------------------------ bench-lyap ---

int cmd_bench_lyap(const std::vector<int>& sizes, const std::string& solvers, int reps,
                   const std::string& out_csv) {
  std::ofstream csv(out_csv, std::ios::trunc);
  if (!csv) throw io::DataError("cannot write " + out_csv);
  csv << "solver,n,median_seconds\n";

  const bool run_block = solvers.find("block") != std::string::npos;
  const bool run_naive = solvers.find("naive") != std::string::npos;

  std::vector<double> log_n, log_t;
  for (const int n : sizes) {
    if (n < 2 || n % 2 != 0) throw CLI::ValidationError("--sizes", "sizes must be even and >= 2");
    const Eigen::Index q = n / 2;
    Rng rng(1234);
    Eigen::VectorXd radius(q), angle(q);
    for (Eigen::Index i = 0; i < q; ++i) {
      radius[i] = rng.uniform(0.3, 0.95);
      angle[i] = rng.uniform(0.0, M_PI);
    }
    Eigen::MatrixXd M = rng.gaussian_matrix(n, n);
    M = ((M + M.transpose()) / 2.0).eval();

    if (run_block) {
      const double t = median_seconds(reps, [&] {
        volatile double sink = solve_lyapunov_blocked(radius, angle, M).sum();
        (void)sink;
      });
      csv << "block," << n << ',' << t << '\n';
      std::printf("block  n=%4d  %.3e s\n", n, t);
      log_n.push_back(std::log(static_cast<double>(n)));
      log_t.push_back(std::log(t));
    }
    if (run_naive && n <= 32) {
      Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
      for (Eigen::Index i = 0; i < q; ++i)
        A.block<2, 2>(2 * i, 2 * i) = scaled_rotation(radius[i], angle[i]);
      const double t = median_seconds(reps, [&] {
        volatile double sink = solve_lyapunov_naive(A, M).sum();
        (void)sink;
      });
      csv << "naive," << n << ',' << t << '\n';
      std::printf("naive  n=%4d  %.3e s\n", n, t);
    }
  }

  if (log_n.size() >= 2) {
    // Least-squares slope of log t against log n.
    const auto mean = [](const std::vector<double>& v) {
      double s = 0.0;
      for (double x : v) s += x;
      return s / static_cast<double>(v.size());
    };
    const double mn = mean(log_n), mt = mean(log_t);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < log_n.size(); ++i) {
      num += (log_n[i] - mn) * (log_t[i] - mt);
      den += (log_n[i] - mn) * (log_n[i] - mn);
    }
    std::printf("block log-log slope: %.3f\n", num / den);
  }
  return kExitOk;
}

// ------------------------------------------------------------ bench-scan ---

int cmd_bench_scan(const std::vector<long>& lengths, const std::vector<int>& worker_counts,
                   int state_dim, int model_dim, int reps, const std::string& out_csv) {
  std::ofstream csv(out_csv, std::ios::trunc);
  if (!csv) throw io::DataError("cannot write " + out_csv);
  csv << "length,workers,median_seconds,steps_per_second\n";

  Rng rng(42);
  RotationSsm params;
  const Eigen::Index q = state_dim / 2, p = model_dim;
  params.radius_raw = rng.gaussian_vector(q, 1.5, 0.25);
  params.angle_raw = rng.gaussian_vector(q);
  params.input_learn = rng.gaussian_matrix(2 * q, p - 1, 0.0, 0.05);
  params.output = rng.gaussian_matrix(p, 2 * q, 0.0, 0.05);
  params.feedthrough = rng.gaussian_vector(p);

  for (const long L : lengths) {
    const Eigen::MatrixXd u = rng.gaussian_matrix(p, L);
    for (const int w : worker_counts) {
      const double t = median_seconds(reps, [&] {
        volatile double sink = scan_sequence(params, u, w).sum();
        (void)sink;
      });
      csv << L << ',' << w << ',' << t << ',' << static_cast<double>(L) / t << '\n';
      std::printf("scan L=%7ld workers=%d  %.3e s  (%.3g steps/s)\n", L, w, t,
                  static_cast<double>(L) / t);
    }
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rotation-parametrized SSM training, Hankel reporting, and compression"};
  app.require_subcommand(1);

  // train ------------------------------------------------------------------
  auto* tr = app.add_subcommand("train", "train a model and write checkpoint + reports");
  TrainConfig cfg;
  std::string preset, config_file, out_dir = ".";
  int hsv_every = 5;
  DataFlags tr_data;
  tr->add_option("--preset", preset, "smnist-toy or smnist-paper");
  tr->add_option("--config", config_file, "JSON config file (same shape as the sidecar)");
  auto* tr_depth = tr->add_option("--depth", cfg.depth, "number of SSM blocks");
  auto* tr_state = tr->add_option("--state-dim", cfg.state_dim, "state dimension n (even)");
  auto* tr_model = tr->add_option("--model-dim", cfg.model_dim, "feature dimension p");
  auto* tr_classes = tr->add_option("--classes", cfg.classes, "number of classes");
  auto* tr_dropout = tr->add_option("--dropout", cfg.dropout, "dropout rate");
  auto* tr_lr = tr->add_option("--lr", cfg.learning_rate, "learning rate");
  auto* tr_batch = tr->add_option("--batch", cfg.batch, "batch size");
  auto* tr_epochs = tr->add_option("--epochs", cfg.epochs, "training epochs");
  auto* tr_wd = tr->add_option("--weight-decay", cfg.weight_decay, "AdamW weight decay");
  auto* tr_reg = tr->add_option("--reg", cfg.reg_mag, "Hankel sum penalty weight");
  auto* tr_seed = tr->add_option("--seed", cfg.seed, "rng seed");
  auto* tr_threads = tr->add_option("--threads", cfg.threads, "worker threads");
  auto* tr_bn = tr->add_flag("--batch-norm", "batch normalization instead of layer norm");
  auto* tr_nores = tr->add_flag("--no-residual", "disable residual connections");
  auto* tr_altb = tr->add_flag("--alt-b-init", "1/sqrt(n+p) init stds for the SSM maps");
  auto* tr_naive = tr->add_flag("--naive-reg", "penalty gradient via the dense Lyapunov oracle");
  tr->add_option("--hsv-every", hsv_every, "epochs between HSV snapshots")->default_val(5);
  tr->add_option("--out-dir", out_dir, "output directory");
  add_data_flags(tr, tr_data);

  // evaluate ---------------------------------------------------------------
  auto* ev = app.add_subcommand("evaluate", "accuracy + latency of a checkpoint");
  std::string ev_ckpt;
  int ev_threads = 1;
  DataFlags ev_data;
  ev->add_option("checkpoint", ev_ckpt, "checkpoint path")->required();
  ev->add_option("--threads", ev_threads, "worker threads");
  add_data_flags(ev, ev_data);

  // compress ---------------------------------------------------------------
  auto* cp = app.add_subcommand("compress", "balanced truncation of a trained checkpoint");
  std::string cp_ckpt, cp_out = ".";
  double cp_energy = 0.0, cp_ratio = -1.0, cp_budget = 0.0;
  bool cp_diag = false;
  int cp_threads = 1;
  cp->add_option("checkpoint", cp_ckpt, "checkpoint path")->required();
  auto* crit = cp->add_option_group("rank criterion", "exactly one must be given");
  crit->add_option("--energy", cp_energy, "retained energy fraction in (0, 1]");
  crit->add_option("--trunc-ratio", cp_ratio, "truncation ratio; target mean rank n(1-ratio)");
  crit->add_option("--budget", cp_budget, "target mean rank");
  crit->require_option(1);
  cp->add_flag("--diagonalize", cp_diag, "store reduced layers in diagonal form");
  cp->add_option("--threads", cp_threads, "worker threads");
  cp->add_option("--out-dir", cp_out, "output directory");

  // hsv-report -------------------------------------------------------------
  auto* hr = app.add_subcommand("hsv-report", "Hankel singular value CSV + SVG");
  std::string hr_ckpt, hr_out = ".";
  int hr_threads = 1;
  hr->add_option("checkpoint", hr_ckpt, "checkpoint path")->required();
  hr->add_option("--threads", hr_threads, "worker threads");
  hr->add_option("--out-dir", hr_out, "output directory");

  // bench-lyap -------------------------------------------------------------
  auto* bl = app.add_subcommand("bench-lyap", "Lyapunov solver timings");
  std::vector<int> bl_sizes = {8, 16, 32, 64, 128, 256, 512};
  std::string bl_solvers = "block,naive", bl_out = "bench_lyap.csv";
  int bl_reps = 11;
  bl->add_option("--sizes", bl_sizes, "state dimensions (even)");
  bl->add_option("--solvers", bl_solvers, "comma list of block,naive");
  bl->add_option("--reps", bl_reps, "repetitions per point (median reported)");
  bl->add_option("--out", bl_out, "CSV path");

  // bench-scan -------------------------------------------------------------
  auto* bs = app.add_subcommand("bench-scan", "sequence scan timings");
  std::vector<long> bs_lengths = {4096, 16384, 65536};
  std::vector<int> bs_workers = {1, 2, 4};
  int bs_state = 64, bs_model = 64, bs_reps = 7;
  std::string bs_out = "bench_scan.csv";
  bs->add_option("--lengths", bs_lengths, "sequence lengths");
  bs->add_option("--workers", bs_workers, "worker counts");
  bs->add_option("--state-dim", bs_state, "state dimension");
  bs->add_option("--model-dim", bs_model, "feature dimension");
  bs->add_option("--reps", bs_reps, "repetitions per point");
  bs->add_option("--out", bs_out, "CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*tr) {
      // Precedence: preset, then config file, then explicit flags.
      TrainConfig base;
      if (!preset.empty()) apply_preset(base, preset);
      if (!config_file.empty()) {
        std::ifstream in(config_file);
        if (!in) throw io::DataError("cannot read config file: " + config_file);
        std::stringstream ss;
        ss << in.rdbuf();
        base = io::config_from_json(ss.str());
      }
      if (!*tr_depth) cfg.depth = base.depth;
      if (!*tr_state) cfg.state_dim = base.state_dim;
      if (!*tr_model) cfg.model_dim = base.model_dim;
      if (!*tr_classes) cfg.classes = base.classes;
      if (!*tr_dropout) cfg.dropout = base.dropout;
      if (!*tr_lr) cfg.learning_rate = base.learning_rate;
      if (!*tr_batch) cfg.batch = base.batch;
      if (!*tr_epochs) cfg.epochs = base.epochs;
      if (!*tr_wd) cfg.weight_decay = base.weight_decay;
      if (!*tr_reg) cfg.reg_mag = base.reg_mag;
      if (!*tr_seed) cfg.seed = base.seed;
      if (!*tr_threads) cfg.threads = base.threads;
      cfg.layer_norm = *tr_bn ? false : base.layer_norm;
      cfg.residual = *tr_nores ? false : base.residual;
      cfg.alt_b_init = *tr_altb ? true : base.alt_b_init;
      cfg.naive_reg = *tr_naive ? true : base.naive_reg;
      if (hsv_every < 1) throw CLI::ValidationError("--hsv-every", "must be >= 1");
      return cmd_train(cfg, tr_data, out_dir, hsv_every);
    }
    if (*ev) return cmd_evaluate(ev_ckpt, ev_data, ev_threads);
    if (*cp) {
      if (crit->count("--energy") && (cp_energy <= 0.0 || cp_energy > 1.0))
        throw CLI::ValidationError("--energy", "must be in (0, 1]");
      if (crit->count("--trunc-ratio") && (cp_ratio < 0.0 || cp_ratio >= 1.0))
        throw CLI::ValidationError("--trunc-ratio", "must be in [0, 1)");
      const double energy = crit->count("--energy") ? cp_energy : 0.0;
      const double ratio = crit->count("--trunc-ratio") ? cp_ratio : -1.0;
      return cmd_compress(cp_ckpt, cp_out, energy, ratio, cp_budget, cp_diag, cp_threads);
    }
    if (*hr) return cmd_hsv_report(hr_ckpt, hr_out, hr_threads);
    if (*bl) return cmd_bench_lyap(bl_sizes, bl_solvers, bl_reps, bl_out);
    if (*bs) return cmd_bench_scan(bs_lengths, bs_workers, bs_state, bs_model, bs_reps, bs_out);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    std::cerr << "usage: see `" << argv[0] << " <subcommand> --help`\n";
    return kExitUsage;
  } catch (const io::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const io::CheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numeric abort: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}
