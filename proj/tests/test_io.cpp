#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ssmkit/checkpoint.hpp"
#include "ssmkit/dataset.hpp"
#include "ssmkit/net.hpp"
#include "ssmkit/rng.hpp"

using namespace ssmkit;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
  const fs::path p = fs::temp_directory_path() / "ssmkit_io_test";
  fs::create_directories(p);
  return p;
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

std::vector<unsigned char> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(bool(in));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void push_be32(std::vector<unsigned char>& v, std::uint32_t x) {
  v.push_back(static_cast<unsigned char>(x >> 24));
  v.push_back(static_cast<unsigned char>(x >> 16));
  v.push_back(static_cast<unsigned char>(x >> 8));
  v.push_back(static_cast<unsigned char>(x));
}

// 3 images of 2x2 pixels + matching labels.
std::vector<unsigned char> idx_images(std::uint32_t count = 3) {
  std::vector<unsigned char> v;
  push_be32(v, 0x00000803u);
  push_be32(v, count);
  push_be32(v, 2);
  push_be32(v, 2);
  for (std::uint32_t i = 0; i < 4 * count; ++i) v.push_back(static_cast<unsigned char>(20 * i));
  return v;
}

std::vector<unsigned char> idx_labels(std::vector<unsigned char> labels) {
  std::vector<unsigned char> v;
  push_be32(v, 0x00000801u);
  push_be32(v, static_cast<std::uint32_t>(labels.size()));
  v.insert(v.end(), labels.begin(), labels.end());
  return v;
}

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.depth = 2;
  cfg.state_dim = 6;
  cfg.model_dim = 4;
  cfg.input_dim = 1;
  cfg.classes = 3;
  cfg.dropout = 0.0;
  cfg.batch = 2;
  cfg.seed = 11;
  return cfg;
}

void check_layer_equal(const SsmLayer& a, const SsmLayer& b) {
  CHECK(a.kind == b.kind);
  CHECK(a.norm_gain == b.norm_gain);
  CHECK(a.norm_bias == b.norm_bias);
  CHECK(a.gate_w == b.gate_w);
  CHECK(a.bn_mean == b.bn_mean);
  CHECK(a.bn_var == b.bn_var);
  if (a.kind == SsmLayer::Kind::rotation) {
    CHECK(a.rot.radius_raw == b.rot.radius_raw);
    CHECK(a.rot.angle_raw == b.rot.angle_raw);
    CHECK(a.rot.input_learn == b.rot.input_learn);
    CHECK(a.rot.output == b.rot.output);
    CHECK(a.rot.feedthrough == b.rot.feedthrough);
  } else {
    CHECK(a.red.mode == b.red.mode);
    CHECK(a.red.order == b.red.order);
    CHECK(a.red.truncated_tail == b.red.truncated_tail);
    CHECK(a.red.rank_clipped == b.red.rank_clipped);
    CHECK(a.red.diagonalization_failed == b.red.diagonalization_failed);
    if (a.red.mode == ReducedSsm::Mode::dense_real) {
      CHECK(a.red.A == b.red.A);
      CHECK(a.red.B == b.red.B);
      CHECK(a.red.C == b.red.C);
    } else {
      CHECK(a.red.lambda == b.red.lambda);
      CHECK(a.red.Bc == b.red.Bc);
      CHECK(a.red.Cc == b.red.Cc);
    }
    CHECK(a.red.D == b.red.D);
  }
}

void check_model_equal(const SequenceModel& a, const SequenceModel& b) {
  CHECK(a.cfg.depth == b.cfg.depth);
  CHECK(a.cfg.state_dim == b.cfg.state_dim);
  CHECK(a.cfg.model_dim == b.cfg.model_dim);
  CHECK(a.cfg.seed == b.cfg.seed);
  CHECK(a.enc_w == b.enc_w);
  CHECK(a.enc_b == b.enc_b);
  CHECK(a.dec_w == b.dec_w);
  CHECK(a.dec_b == b.dec_b);
  REQUIRE(a.layers.size() == b.layers.size());
  for (std::size_t l = 0; l < a.layers.size(); ++l) check_layer_equal(a.layers[l], b.layers[l]);
}

}  // namespace

TEST_CASE("synthetic generator is deterministic and labels are in range") {
  io::SynthConfig sc;
  sc.classes = 10;
  sc.T = 50;
  sc.train_count = 2000;
  sc.eval_count = 100;
  sc.seed = 7;
  const io::SplitPair a = io::make_synthetic(sc);
  const io::SplitPair b = io::make_synthetic(sc);
  CHECK(a.train.inputs == b.train.inputs);
  CHECK(a.train.labels == b.train.labels);
  CHECK(a.eval.inputs == b.eval.inputs);
  CHECK(a.train.inputs.rows() == 2000 * 50);
  CHECK(a.train.T == 50);
  CHECK(a.train.classes == 10);

  std::vector<int> counts(10, 0);
  for (int l : a.train.labels) {
    REQUIRE(l >= 0);
    REQUIRE(l < 10);
    ++counts[l];
  }
  for (int c : counts) CHECK(c > 120);  // roughly uniform over 2000 draws

  sc.seed = 8;
  const io::SplitPair c = io::make_synthetic(sc);
  CHECK(a.train.inputs != c.train.inputs);

  io::SynthConfig bad = sc;
  bad.classes = 1;
  CHECK_THROWS_AS(io::make_synthetic(bad), std::invalid_argument);
}

TEST_CASE("normalization uses train statistics for both splits") {
  Dataset train, eval;
  train.T = 2;
  train.classes = 2;
  train.inputs.resize(4, 1);
  train.inputs << 1.0, 2.0, 3.0, 4.0;
  train.labels = {0, 1};
  eval.T = 2;
  eval.classes = 2;
  eval.inputs.resize(2, 1);
  eval.inputs << 5.0, 6.0;
  eval.labels = {1};

  io::normalize_train_eval(train, eval);
  const double mean = 2.5, sd = std::sqrt(1.25);
  for (int i = 0; i < 4; ++i)
    CHECK(train.inputs(i, 0) == doctest::Approx((i + 1 - mean) / sd).epsilon(1e-15));
  CHECK(eval.inputs(0, 0) == doctest::Approx((5.0 - mean) / sd).epsilon(1e-15));
  CHECK(eval.inputs(1, 0) == doctest::Approx((6.0 - mean) / sd).epsilon(1e-15));
  CHECK(std::abs(train.inputs.mean()) < 1e-14);
}

TEST_CASE("subset keeps whole sequences and is reproducible") {
  Dataset d;
  d.T = 3;
  d.classes = 20;
  d.inputs.resize(20 * 3, 1);
  d.labels.resize(20);
  for (Eigen::Index s = 0; s < 20; ++s) {
    d.labels[s] = static_cast<int>(s);
    for (Eigen::Index t = 0; t < 3; ++t) d.inputs(s * 3 + t, 0) = 100.0 * s + t;
  }

  const Dataset s1 = io::subset(d, 5, 42);
  const Dataset s2 = io::subset(d, 5, 42);
  CHECK(s1.inputs == s2.inputs);
  CHECK(s1.labels == s2.labels);
  CHECK(s1.size() == 5);
  CHECK(s1.T == 3);
  for (Eigen::Index s = 0; s < 5; ++s) {
    const int src = s1.labels[s];
    for (Eigen::Index t = 0; t < 3; ++t)
      CHECK(s1.inputs(s * 3 + t, 0) == 100.0 * src + t);
  }

  const Dataset s3 = io::subset(d, 5, 43);
  CHECK(s1.labels != s3.labels);  // different seed picks a different set

  const Dataset all = io::subset(d, 50, 42);
  CHECK(all.size() == 20);  // clamped
}

TEST_CASE("idx loader round-trips a crafted fixture") {
  const fs::path dir = scratch_dir();
  const fs::path ip = dir / "img.idx", lp = dir / "lab.idx";
  write_bytes(ip, idx_images());
  write_bytes(lp, idx_labels({0, 5, 9}));

  const Dataset d = io::load_idx(ip.string(), lp.string());
  CHECK(d.size() == 3);
  CHECK(d.T == 4);
  CHECK(d.classes == 10);
  CHECK(d.labels == std::vector<int>{0, 5, 9});
  for (Eigen::Index s = 0; s < 3; ++s)
    for (Eigen::Index t = 0; t < 4; ++t)
      CHECK(d.inputs(s * 4 + t, 0) == static_cast<double>((20 * (4 * s + t)) % 256));
}

TEST_CASE("idx loader rejects malformed files") {
  const fs::path dir = scratch_dir();
  const fs::path ip = dir / "img.idx", lp = dir / "lab.idx";

  write_bytes(ip, idx_images());
  write_bytes(lp, idx_labels({0, 5, 9}));
  CHECK_THROWS_AS(io::load_idx((dir / "missing.idx").string(), lp.string()), io::DataError);

  auto bad_magic = idx_images();
  bad_magic[3] = 0x04;
  write_bytes(ip, bad_magic);
  CHECK_THROWS_AS(io::load_idx(ip.string(), lp.string()), io::DataError);

  auto truncated = idx_images();
  truncated.resize(10);
  write_bytes(ip, truncated);
  CHECK_THROWS_AS(io::load_idx(ip.string(), lp.string()), io::DataError);

  auto short_payload = idx_images();
  short_payload.pop_back();
  write_bytes(ip, short_payload);
  CHECK_THROWS_AS(io::load_idx(ip.string(), lp.string()), io::DataError);

  write_bytes(ip, idx_images());
  write_bytes(lp, idx_labels({0, 5}));  // count mismatch
  CHECK_THROWS_AS(io::load_idx(ip.string(), lp.string()), io::DataError);

  write_bytes(lp, idx_labels({0, 5, 12}));  // out of range
  CHECK_THROWS_AS(io::load_idx(ip.string(), lp.string()), io::DataError);

  auto label_magic = idx_labels({0, 5, 9});
  label_magic[3] = 0x03;
  write_bytes(lp, label_magic);
  CHECK_THROWS_AS(io::load_idx(ip.string(), lp.string()), io::DataError);
}

TEST_CASE("checkpoint save/load/save is byte-identical for a trained model") {
  const fs::path dir = scratch_dir();
  TrainConfig cfg = tiny_config();
  SequenceModel model = init_model(cfg);

  // one optimizer step so the moment buffers are nontrivial
  Rng rng(5);
  const Eigen::MatrixXd inputs = rng.gaussian_matrix(8 * 2, 1);
  ModelGrad grad = make_grad_like(model);
  loss_and_grad(model, inputs, {0, 2}, 2, nullptr, grad);
  AdamState opt;
  adamw_step(model, grad, opt, 1e-3, 0.05);

  io::Checkpoint ck;
  ck.model = model;
  ck.has_optimizer = true;
  ck.optimizer = opt;
  ck.order_rng = Rng(123).serialize();
  ck.dropout_rng = Rng(456).serialize();

  const fs::path p1 = dir / "a.ckpt", p2 = dir / "b.ckpt";
  io::save_checkpoint(ck, p1.string());
  const io::Checkpoint back = io::load_checkpoint(p1.string());

  check_model_equal(back.model, model);
  REQUIRE(back.has_optimizer);
  CHECK(back.optimizer.step == opt.step);
  REQUIRE(back.optimizer.m.size() == opt.m.size());
  for (std::size_t i = 0; i < opt.m.size(); ++i) {
    CHECK(back.optimizer.m[i] == opt.m[i]);
    CHECK(back.optimizer.v[i] == opt.v[i]);
  }
  CHECK(back.order_rng == ck.order_rng);
  CHECK(back.dropout_rng == ck.dropout_rng);

  io::save_checkpoint(back, p2.string());
  CHECK(read_bytes(p1) == read_bytes(p2));

  // sidecar carries the same config
  const auto sidecar = read_bytes(fs::path(p1.string() + ".json"));
  const TrainConfig side =
      io::config_from_json(std::string(sidecar.begin(), sidecar.end()));
  CHECK(side.state_dim == cfg.state_dim);
  CHECK(side.seed == cfg.seed);
}

TEST_CASE("checkpoint round-trips compressed models") {
  const fs::path dir = scratch_dir();
  TrainConfig cfg = tiny_config();
  SequenceModel model = init_model(cfg);
  std::vector<RotationSsm> rots;
  for (auto& l : model.layers) rots.push_back(l.rot);
  const RankPlan plan = allocate_ranks_energy(make_hsv_report(rots), 0.95);

  for (const bool diag : {false, true}) {
    const SequenceModel reduced = compress_model(model, plan, diag);
    io::Checkpoint ck;
    ck.model = reduced;
    const fs::path p1 = dir / (diag ? "d1.ckpt" : "r1.ckpt");
    const fs::path p2 = dir / (diag ? "d2.ckpt" : "r2.ckpt");
    io::save_checkpoint(ck, p1.string());
    const io::Checkpoint back = io::load_checkpoint(p1.string());
    CHECK(!back.has_optimizer);
    check_model_equal(back.model, reduced);
    io::save_checkpoint(back, p2.string());
    CHECK(read_bytes(p1) == read_bytes(p2));
  }
}

TEST_CASE("checkpoint loader rejects corrupt containers") {
  const fs::path dir = scratch_dir();
  io::Checkpoint ck;
  ck.model = init_model(tiny_config());
  const fs::path p = dir / "v.ckpt";
  io::save_checkpoint(ck, p.string());

  CHECK_THROWS_AS(io::load_checkpoint((dir / "nope.ckpt").string()), io::CheckpointError);

  auto bytes = read_bytes(p);
  auto corrupt = bytes;
  corrupt[0] ^= 0xff;
  write_bytes(dir / "m.ckpt", corrupt);
  CHECK_THROWS_AS(io::load_checkpoint((dir / "m.ckpt").string()), io::CheckpointError);

  corrupt = bytes;
  corrupt[8] += 1;  // version is the u32 after the 8-byte magic
  write_bytes(dir / "ver.ckpt", corrupt);
  CHECK_THROWS_AS(io::load_checkpoint((dir / "ver.ckpt").string()), io::CheckpointError);

  corrupt = bytes;
  corrupt.resize(corrupt.size() / 2);
  write_bytes(dir / "t.ckpt", corrupt);
  CHECK_THROWS_AS(io::load_checkpoint((dir / "t.ckpt").string()), io::CheckpointError);
}

TEST_CASE("config json round-trip covers every field") {
  TrainConfig cfg;
  cfg.depth = 3;
  cfg.state_dim = 14;
  cfg.model_dim = 9;
  cfg.input_dim = 2;
  cfg.classes = 7;
  cfg.dropout = 0.25;
  cfg.learning_rate = 5e-4;
  cfg.batch = 17;
  cfg.epochs = 42;
  cfg.weight_decay = 0.125;
  cfg.reg_mag = 3e-5;
  cfg.seed = 987654321;
  cfg.layer_norm = false;
  cfg.residual = false;
  cfg.alt_b_init = true;
  cfg.naive_reg = true;
  cfg.threads = 4;

  const TrainConfig back = io::config_from_json(io::config_to_json(cfg));
  CHECK(back.depth == cfg.depth);
  CHECK(back.state_dim == cfg.state_dim);
  CHECK(back.model_dim == cfg.model_dim);
  CHECK(back.input_dim == cfg.input_dim);
  CHECK(back.classes == cfg.classes);
  CHECK(back.dropout == cfg.dropout);
  CHECK(back.learning_rate == cfg.learning_rate);
  CHECK(back.batch == cfg.batch);
  CHECK(back.epochs == cfg.epochs);
  CHECK(back.weight_decay == cfg.weight_decay);
  CHECK(back.reg_mag == cfg.reg_mag);
  CHECK(back.seed == cfg.seed);
  CHECK(back.layer_norm == cfg.layer_norm);
  CHECK(back.residual == cfg.residual);
  CHECK(back.alt_b_init == cfg.alt_b_init);
  CHECK(back.naive_reg == cfg.naive_reg);
  CHECK(back.threads == cfg.threads);

  CHECK_THROWS_AS(io::config_from_json("{ not json"), io::CheckpointError);
  CHECK_THROWS_AS(io::config_from_json("{}"), io::CheckpointError);
}

TEST_CASE("rng state serialization resumes the exact stream") {
  Rng a(314);
  for (int i = 0; i < 7; ++i) a.gaussian();  // leaves a Box-Muller spare
  const std::string s = a.serialize();
  Rng b(0);
  b.deserialize(s);
  for (int i = 0; i < 100; ++i) CHECK(a.gaussian() == b.gaussian());
  for (int i = 0; i < 100; ++i) CHECK(a.index(97) == b.index(97));
}
