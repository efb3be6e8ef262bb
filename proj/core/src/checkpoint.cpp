#include "ssmkit/checkpoint.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "checkpoint container assumes a little-endian host");
static_assert(sizeof(double) == 8);

namespace ssmkit::io {

namespace {

constexpr char kMagic[8] = {'S', 'S', 'M', 'K', 'C', 'K', 'P', 'T'};

enum : std::uint8_t { kDtypeReal = 0, kDtypeComplex = 1 };

using json = nlohmann::ordered_json;

json to_json(const TrainConfig& c) {
  json j;
  j["depth"] = c.depth;
  j["state_dim"] = c.state_dim;
  j["model_dim"] = c.model_dim;
  j["input_dim"] = c.input_dim;
  j["classes"] = c.classes;
  j["dropout"] = c.dropout;
  j["learning_rate"] = c.learning_rate;
  j["batch"] = c.batch;
  j["epochs"] = c.epochs;
  j["weight_decay"] = c.weight_decay;
  j["reg_mag"] = c.reg_mag;
  j["seed"] = c.seed;
  j["layer_norm"] = c.layer_norm;
  j["residual"] = c.residual;
  j["alt_b_init"] = c.alt_b_init;
  j["naive_reg"] = c.naive_reg;
  j["threads"] = c.threads;
  return j;
}

TrainConfig from_json(const json& j) {
  TrainConfig c;
  c.depth = j.at("depth").get<int>();
  c.state_dim = j.at("state_dim").get<int>();
  c.model_dim = j.at("model_dim").get<int>();
  c.input_dim = j.at("input_dim").get<int>();
  c.classes = j.at("classes").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.batch = j.at("batch").get<int>();
  c.epochs = j.at("epochs").get<int>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.reg_mag = j.at("reg_mag").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.layer_norm = j.value("layer_norm", true);
  c.residual = j.value("residual", true);
  c.alt_b_init = j.value("alt_b_init", false);
  c.naive_reg = j.value("naive_reg", false);
  c.threads = j.value("threads", 1);
  return c;
}

struct Writer {
  std::ofstream out;

  explicit Writer(const std::string& path) : out(path, std::ios::binary | std::ios::trunc) {
    if (!out) throw CheckpointError("cannot open for writing: " + path);
  }

  void bytes(const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void i64(std::int64_t v) { bytes(&v, 8); }
  void f64(double v) { bytes(&v, 8); }

  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }

  void tensor(const Eigen::MatrixXd& m) {
    u8(kDtypeReal);
    u64(static_cast<std::uint64_t>(m.rows()));
    u64(static_cast<std::uint64_t>(m.cols()));
    bytes(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
  }
  void tensor(const Eigen::VectorXd& v) {
    u8(kDtypeReal);
    u64(static_cast<std::uint64_t>(v.size()));
    u64(1);
    bytes(v.data(), sizeof(double) * static_cast<std::size_t>(v.size()));
  }
  void tensor(const Eigen::MatrixXcd& m) {
    u8(kDtypeComplex);
    u64(static_cast<std::uint64_t>(m.rows()));
    u64(static_cast<std::uint64_t>(m.cols()));
    // std::complex<double> is layout-compatible with double[2] (re, im).
    bytes(m.data(), 2 * sizeof(double) * static_cast<std::size_t>(m.size()));
  }
  void tensor(const Eigen::VectorXcd& v) {
    u8(kDtypeComplex);
    u64(static_cast<std::uint64_t>(v.size()));
    u64(1);
    bytes(v.data(), 2 * sizeof(double) * static_cast<std::size_t>(v.size()));
  }
};

struct Reader {
  std::ifstream in;
  std::string path;

  explicit Reader(const std::string& p) : in(p, std::ios::binary), path(p) {
    if (!in) throw CheckpointError("cannot open checkpoint: " + p);
  }

  void bytes(void* p, std::size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (in.gcount() != static_cast<std::streamsize>(n))
      throw CheckpointError("truncated checkpoint: " + path);
  }
  std::uint8_t u8() {
    std::uint8_t v;
    bytes(&v, 1);
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    bytes(&v, 8);
    return v;
  }
  std::int64_t i64() {
    std::int64_t v;
    bytes(&v, 8);
    return v;
  }

  std::string str() {
    const std::uint64_t n = u64();
    if (n > (1ull << 32)) throw CheckpointError("corrupt string length in " + path);
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }

  std::pair<Eigen::Index, Eigen::Index> shape(std::uint8_t want_dtype) {
    const std::uint8_t dt = u8();
    if (dt != want_dtype) throw CheckpointError("unexpected tensor dtype in " + path);
    const std::uint64_t rows = u64(), cols = u64();
    if (rows > (1ull << 32) || cols > (1ull << 32))
      throw CheckpointError("corrupt tensor shape in " + path);
    return {static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
  }

  Eigen::MatrixXd matrix() {
    auto [rows, cols] = shape(kDtypeReal);
    Eigen::MatrixXd m(rows, cols);
    bytes(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
    return m;
  }
  Eigen::VectorXd vector() {
    auto [rows, cols] = shape(kDtypeReal);
    if (cols != 1) throw CheckpointError("expected a column tensor in " + path);
    Eigen::VectorXd v(rows);
    bytes(v.data(), sizeof(double) * static_cast<std::size_t>(v.size()));
    return v;
  }
  Eigen::MatrixXcd cmatrix() {
    auto [rows, cols] = shape(kDtypeComplex);
    Eigen::MatrixXcd m(rows, cols);
    bytes(m.data(), 2 * sizeof(double) * static_cast<std::size_t>(m.size()));
    return m;
  }
  Eigen::VectorXcd cvector() {
    auto [rows, cols] = shape(kDtypeComplex);
    if (cols != 1) throw CheckpointError("expected a column tensor in " + path);
    Eigen::VectorXcd v(rows);
    bytes(v.data(), 2 * sizeof(double) * static_cast<std::size_t>(v.size()));
    return v;
  }
};

void write_layer(Writer& w, const SsmLayer& layer) {
  w.u8(layer.kind == SsmLayer::Kind::rotation ? 0 : 1);
  if (layer.kind == SsmLayer::Kind::rotation) {
    w.tensor(layer.rot.radius_raw);
    w.tensor(layer.rot.angle_raw);
    w.tensor(layer.rot.input_learn);
    w.tensor(layer.rot.output);
    w.tensor(layer.rot.feedthrough);
  } else {
    const ReducedSsm& r = layer.red;
    w.u8(r.mode == ReducedSsm::Mode::dense_real ? 0 : 1);
    w.u64(static_cast<std::uint64_t>(r.order));
    w.f64(r.truncated_tail);
    w.u8(r.rank_clipped ? 1 : 0);
    w.u8(r.diagonalization_failed ? 1 : 0);
    if (r.mode == ReducedSsm::Mode::dense_real) {
      w.tensor(r.A);
      w.tensor(r.B);
      w.tensor(r.C);
      w.tensor(r.D);
    } else {
      w.tensor(r.lambda);
      w.tensor(r.Bc);
      w.tensor(r.Cc);
      w.tensor(r.D);  // feedthrough stays real in both modes
    }
  }
  w.tensor(layer.norm_gain);
  w.tensor(layer.norm_bias);
  w.tensor(layer.gate_w);
  w.tensor(layer.bn_mean);
  w.tensor(layer.bn_var);
}

SsmLayer read_layer(Reader& r) {
  SsmLayer layer;
  const std::uint8_t kind = r.u8();
  if (kind > 1) throw CheckpointError("unknown layer kind tag in " + r.path);
  if (kind == 0) {
    layer.kind = SsmLayer::Kind::rotation;
    layer.rot.radius_raw = r.vector();
    layer.rot.angle_raw = r.vector();
    layer.rot.input_learn = r.matrix();
    layer.rot.output = r.matrix();
    layer.rot.feedthrough = r.vector();
  } else {
    layer.kind = SsmLayer::Kind::reduced;
    ReducedSsm& red = layer.red;
    const std::uint8_t mode = r.u8();
    if (mode > 1) throw CheckpointError("unknown reduced mode tag in " + r.path);
    red.mode = mode == 0 ? ReducedSsm::Mode::dense_real : ReducedSsm::Mode::diagonal_complex;
    red.order = static_cast<Eigen::Index>(r.u64());
    double tail;
    r.bytes(&tail, 8);
    red.truncated_tail = tail;
    red.rank_clipped = r.u8() != 0;
    red.diagonalization_failed = r.u8() != 0;
    if (red.mode == ReducedSsm::Mode::dense_real) {
      red.A = r.matrix();
      red.B = r.matrix();
      red.C = r.matrix();
      red.D = r.matrix();
    } else {
      red.lambda = r.cvector();
      red.Bc = r.cmatrix();
      red.Cc = r.cmatrix();
      red.D = r.matrix();
    }
  }
  layer.norm_gain = r.vector();
  layer.norm_bias = r.vector();
  layer.gate_w = r.matrix();
  layer.bn_mean = r.vector();
  layer.bn_var = r.vector();
  return layer;
}

}  // namespace

std::string config_to_json(const TrainConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

TrainConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("config JSON parse failure: ") + e.what());
  }
  try {
    return from_json(j);
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("config JSON missing/invalid field: ") + e.what());
  }
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  Writer w(path);
  w.bytes(kMagic, sizeof(kMagic));
  w.u32(kCheckpointVersion);
  const std::string cfg_json = config_to_json(ckpt.model.cfg);
  w.str(cfg_json);

  const SequenceModel& m = ckpt.model;
  w.tensor(m.enc_w);
  w.tensor(m.enc_b);
  w.u64(m.layers.size());
  for (const auto& layer : m.layers) write_layer(w, layer);
  w.tensor(m.dec_w);
  w.tensor(m.dec_b);

  w.u8(ckpt.has_optimizer ? 1 : 0);
  if (ckpt.has_optimizer) {
    w.i64(ckpt.optimizer.step);
    w.u64(ckpt.optimizer.m.size());
    for (std::size_t i = 0; i < ckpt.optimizer.m.size(); ++i) {
      w.tensor(ckpt.optimizer.m[i]);
      w.tensor(ckpt.optimizer.v[i]);
    }
  }
  w.str(ckpt.order_rng);
  w.str(ckpt.dropout_rng);
  w.out.flush();
  if (!w.out) throw CheckpointError("write failure: " + path);

  std::ofstream sidecar(path + ".json", std::ios::trunc);
  if (!sidecar) throw CheckpointError("cannot write sidecar: " + path + ".json");
  sidecar << cfg_json;
}

Checkpoint load_checkpoint(const std::string& path) {
  Reader r(path);
  char magic[8];
  r.bytes(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw CheckpointError("bad magic, not a checkpoint: " + path);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) +
                          " (expected " + std::to_string(kCheckpointVersion) + "): " + path);

  Checkpoint ckpt;
  ckpt.model.cfg = config_from_json(r.str());
  ckpt.model.enc_w = r.matrix();
  ckpt.model.enc_b = r.vector();
  const std::uint64_t nlayers = r.u64();
  if (nlayers > 4096) throw CheckpointError("corrupt layer count in " + path);
  ckpt.model.layers.reserve(nlayers);
  for (std::uint64_t i = 0; i < nlayers; ++i) ckpt.model.layers.push_back(read_layer(r));
  ckpt.model.dec_w = r.matrix();
  ckpt.model.dec_b = r.vector();

  ckpt.has_optimizer = r.u8() != 0;
  if (ckpt.has_optimizer) {
    ckpt.optimizer.step = r.i64();
    const std::uint64_t nbuf = r.u64();
    if (nbuf > (1u << 20)) throw CheckpointError("corrupt optimizer buffer count in " + path);
    ckpt.optimizer.m.reserve(nbuf);
    ckpt.optimizer.v.reserve(nbuf);
    for (std::uint64_t i = 0; i < nbuf; ++i) {
      ckpt.optimizer.m.push_back(r.vector());
      ckpt.optimizer.v.push_back(r.vector());
    }
  }
  ckpt.order_rng = r.str();
  ckpt.dropout_rng = r.str();
  return ckpt;
}

}  // namespace ssmkit::io
