#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ssmkit/checkpoint.hpp"
#include "ssmkit/hankel.hpp"
#include "ssmkit/report.hpp"

using namespace ssmkit;
namespace fs = std::filesystem;

namespace {

const std::string kCli = SSMKIT_CLI_PATH;

fs::path scratch_root() {
  const fs::path p = fs::temp_directory_path() / "ssmkit_cli_test";
  fs::create_directories(p);
  return p;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = scratch_root() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct RunResult {
  int code = -1;
  std::string output;
};

RunResult run(const std::string& args) {
  static int counter = 0;
  const fs::path log = scratch_root() / ("out_" + std::to_string(counter++) + ".txt");
  const std::string cmd = "'" + kCli + "' " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult r;
  if (status != -1 && WIFEXITED(status)) r.code = WEXITSTATUS(status);
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  r.output = ss.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(bool(in));
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t line_count(const std::string& text) {
  std::size_t n = 0;
  for (char c : text)
    if (c == '\n') ++n;
  return n;
}

// Small fully-synthetic training run; returns the output directory.
fs::path train_small(const std::string& name, const std::string& extra = "") {
  const fs::path dir = fresh_dir(name);
  const RunResult r = run(
      "train --depth 1 --state-dim 8 --model-dim 8 --classes 3 --epochs 2 --batch 16 "
      "--dropout 0 --seed 1 --hsv-every 1 --synth-seq-len 30 --synth-train 64 "
      "--synth-eval 32 --out-dir '" +
      dir.string() + "' " + extra);
  REQUIRE(r.code == 0);
  return dir;
}

std::string grab_token(const std::string& text, const std::string& key) {
  const auto pos = text.find(key);
  REQUIRE(pos != std::string::npos);
  const auto end = text.find_first_of(" \n", pos + key.size());
  return text.substr(pos + key.size(), end - pos - key.size());
}

}  // namespace

TEST_CASE("bad invocations exit with the usage code") {
  CHECK(run("").code == 2);
  CHECK(run("frobnicate").code == 2);
  CHECK(run("train --depth 0 --epochs 0").code == 2);
  CHECK(run("train --hsv-every 0 --epochs 0").code == 2);
  CHECK(run("evaluate").code == 2);  // missing checkpoint argument
  CHECK(run("compress x.ckpt").code == 2);  // no rank criterion
  CHECK(run("compress x.ckpt --energy 0.9 --budget 4").code == 2);
  CHECK(run("compress x.ckpt --energy 1.5").code == 2);
  CHECK(run("compress x.ckpt --trunc-ratio 1.0").code == 2);

  const RunResult bad = run("train --depth 0 --epochs 0");
  CHECK(bad.output.find("usage") != std::string::npos);

  CHECK(run("--help").code == 0);
  CHECK(run("train --help").code == 0);
}

TEST_CASE("missing files exit with the data code") {
  CHECK(run("train --data-dir /nonexistent-idx-dir --epochs 1").code == 3);
  CHECK(run("evaluate /nonexistent.ckpt").code == 3);
  CHECK(run("hsv-report /nonexistent.ckpt").code == 3);
}

TEST_CASE("training writes checkpoint, metrics, and spectrum snapshots") {
  const fs::path dir = train_small("train_smoke");
  CHECK(fs::exists(dir / "model.ckpt"));
  CHECK(fs::exists(dir / "model.ckpt.json"));
  CHECK(fs::exists(dir / "metrics.csv"));
  CHECK(fs::exists(dir / "hsv_epoch_001.csv"));
  CHECK(fs::exists(dir / "hsv_epoch_002.csv"));

  const std::string metrics = slurp(dir / "metrics.csv");
  CHECK(line_count(metrics) == 3);  // header + one row per epoch
  CHECK(metrics.rfind("epoch,", 0) == 0);

  // identical invocation reproduces the checkpoint bit for bit
  const fs::path dir2 = train_small("train_smoke_again");
  CHECK(slurp(dir / "model.ckpt") == slurp(dir2 / "model.ckpt"));
}

TEST_CASE("config file sets defaults and flags override it") {
  const fs::path dir = fresh_dir("train_config");
  TrainConfig base;
  base.depth = 1;
  base.state_dim = 4;
  base.model_dim = 4;
  base.classes = 3;
  base.dropout = 0.0;
  base.batch = 8;
  base.epochs = 1;
  base.seed = 2;
  const fs::path cfg_path = dir / "cfg.json";
  std::ofstream(cfg_path) << io::config_to_json(base);

  const RunResult r = run("train --config '" + cfg_path.string() +
                          "' --epochs 2 --synth-seq-len 20 --synth-train 32 --synth-eval 16 "
                          "--out-dir '" +
                          dir.string() + "'");
  REQUIRE(r.code == 0);
  const io::Checkpoint ck = io::load_checkpoint((dir / "model.ckpt").string());
  CHECK(ck.model.cfg.state_dim == 4);  // from the config file
  CHECK(ck.model.cfg.epochs == 2);     // flag wins
  CHECK(line_count(slurp(dir / "metrics.csv")) == 3);
}

TEST_CASE("spectrum report matches an in-process recomputation exactly") {
  const fs::path dir = train_small("hsv_cli");
  const fs::path rep = fresh_dir("hsv_cli_rep");
  const RunResult r = run("hsv-report '" + (dir / "model.ckpt").string() + "' --out-dir '" +
                          rep.string() + "'");
  REQUIRE(r.code == 0);
  REQUIRE(fs::exists(rep / "hsv.csv"));
  REQUIRE(fs::exists(rep / "hsv.svg"));

  const io::Checkpoint ck = io::load_checkpoint((dir / "model.ckpt").string());
  std::vector<RotationSsm> rots;
  for (const auto& l : ck.model.layers) rots.push_back(l.rot);
  const HsvReport report = make_hsv_report(rots);
  const fs::path mine = rep / "recomputed.csv";
  io::write_hsv_csv(mine.string(), report);
  CHECK(slurp(rep / "hsv.csv") == slurp(mine));

  const std::string svg = slurp(rep / "hsv.svg");
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("polyline") != std::string::npos);
}

TEST_CASE("compression emits a certificate consistent with the spectrum") {
  const fs::path dir = train_small("compress_cli");
  const fs::path out = fresh_dir("compress_cli_out");
  const RunResult r = run("compress '" + (dir / "model.ckpt").string() +
                          "' --trunc-ratio 0.5 --out-dir '" + out.string() + "'");
  REQUIRE(r.code == 0);
  REQUIRE(fs::exists(out / "compressed.ckpt"));
  REQUIRE(fs::exists(out / "certificate.csv"));

  const io::Checkpoint orig = io::load_checkpoint((dir / "model.ckpt").string());
  const io::Checkpoint comp = io::load_checkpoint((out / "compressed.ckpt").string());
  REQUIRE(comp.model.compressed());

  // tails recomputed from the original spectrum and the achieved ranks
  std::vector<RotationSsm> rots;
  for (const auto& l : orig.model.layers) rots.push_back(l.rot);
  const HsvReport report = make_hsv_report(rots);
  std::vector<io::CertRow> rows;
  for (std::size_t l = 0; l < report.layer_sigmas.size(); ++l) {
    io::CertRow row;
    row.layer = static_cast<int>(l);
    row.r = comp.model.layers[l].red.order;
    const Eigen::VectorXd& s = report.layer_sigmas[l];
    row.tail_sum = s.size() > row.r ? s.tail(s.size() - row.r).sum() : 0.0;
    row.bound_constant = 2.0 * row.tail_sum;
    rows.push_back(row);
  }
  const fs::path mine = out / "recomputed.csv";
  io::write_certificate_csv(mine.string(), rows);
  CHECK(slurp(out / "certificate.csv") == slurp(mine));

  // mean rank reported on stdout matches the n(1 - ratio) target
  CHECK(r.output.find("mean rank 4.00") != std::string::npos);

  // a second compression of an already-reduced checkpoint is a data error
  const RunResult again = run("compress '" + (out / "compressed.ckpt").string() +
                              "' --budget 2 --out-dir '" + out.string() + "'");
  CHECK(again.code == 3);
  const RunResult rep_err = run("hsv-report '" + (out / "compressed.ckpt").string() +
                                "' --out-dir '" + out.string() + "'");
  CHECK(rep_err.code == 3);
}

TEST_CASE("full-rank compression leaves accuracy untouched") {
  const fs::path dir = train_small("eval_cli");
  const fs::path out = fresh_dir("eval_cli_out");
  const RunResult c = run("compress '" + (dir / "model.ckpt").string() +
                          "' --budget 8 --out-dir '" + out.string() + "'");
  REQUIRE(c.code == 0);

  const std::string data_flags =
      " --synth-seq-len 30 --synth-train 64 --synth-eval 32";
  const RunResult e1 = run("evaluate '" + (dir / "model.ckpt").string() + "'" + data_flags);
  const RunResult e2 = run("evaluate '" + (out / "compressed.ckpt").string() + "'" + data_flags);
  REQUIRE(e1.code == 0);
  REQUIRE(e2.code == 0);
  const std::string a1 = grab_token(e1.output, "accuracy=");
  const std::string a2 = grab_token(e2.output, "accuracy=");
  CHECK(a1 == a2);
  CHECK(std::stod(a1) >= 0.0);
  CHECK(std::stod(a1) <= 1.0);
  CHECK(std::stod(grab_token(e1.output, "batches=")) > 0);
}

TEST_CASE("the spectrum penalty visibly reshapes the spectrum") {
  const fs::path plain = train_small("reg_off", "--reg 0");
  const fs::path reg = train_small("reg_on", "--reg 1e-3");
  const std::string h1 = slurp(plain / "hsv_epoch_002.csv");
  const std::string h2 = slurp(reg / "hsv_epoch_002.csv");
  CHECK(h1 != h2);
}

TEST_CASE("solver benchmark runs and writes its table") {
  const fs::path dir = fresh_dir("bench_cli");
  const fs::path csv = dir / "lyap.csv";
  const RunResult r =
      run("bench-lyap --sizes 8 16 --reps 1 --out '" + csv.string() + "'");
  REQUIRE(r.code == 0);
  const std::string table = slurp(csv);
  CHECK(table.rfind("solver,n,median_seconds", 0) == 0);
  CHECK(table.find("block,8,") != std::string::npos);
  CHECK(table.find("naive,16,") != std::string::npos);
  CHECK(run("bench-lyap --sizes 7 --reps 1 --out '" + csv.string() + "'").code == 2);
}
