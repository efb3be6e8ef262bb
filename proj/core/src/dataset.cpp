#include "ssmkit/dataset.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "ssmkit/rng.hpp"

namespace ssmkit::io {

SplitPair make_synthetic(const SynthConfig& cfg) {
  if (cfg.classes < 2 || cfg.T < 4 || cfg.train_count < 1 || cfg.eval_count < 1)
    throw std::invalid_argument("make_synthetic: bad config");
  Rng rng(cfg.seed ^ 0x517cc1b727220a95ull);

  const auto fill = [&](Dataset& d, Eigen::Index count) {
    d.T = cfg.T;
    d.classes = cfg.classes;
    d.inputs.resize(count * cfg.T, 1);
    d.labels.resize(count);
    for (Eigen::Index s = 0; s < count; ++s) {
      const int c = static_cast<int>(rng.index(cfg.classes));
      d.labels[s] = c;
      const double omega =
          0.3 + 2.5 * static_cast<double>(c) / static_cast<double>(cfg.classes - 1);
      const double phase = rng.uniform(0.0, 2.0 * M_PI);
      const int delay =
          cfg.echo_delay_min +
          static_cast<int>(rng.index(cfg.echo_delay_max - cfg.echo_delay_min + 1));
      std::vector<double> base(cfg.T);
      for (Eigen::Index t = 0; t < cfg.T; ++t)
        base[t] = std::sin(omega * static_cast<double>(t) + phase);
      for (Eigen::Index t = 0; t < cfg.T; ++t) {
        double v = base[t];
        if (t >= delay) v += cfg.echo_coeff * base[t - delay];
        v += rng.gaussian(0.0, cfg.noise);
        d.inputs(s * cfg.T + t, 0) = v;
      }
    }
  };

  SplitPair out;
  fill(out.train, cfg.train_count);
  fill(out.eval, cfg.eval_count);
  return out;
}

namespace {

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off) {
  return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
         (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);
  if (img.size() < 16) throw DataError("image file truncated header: " + images_path);
  if (lab.size() < 8) throw DataError("label file truncated header: " + labels_path);
  if (be32(img, 0) != 0x00000803u)
    throw DataError("bad image magic (expected 0x00000803): " + images_path);
  if (be32(lab, 0) != 0x00000801u)
    throw DataError("bad label magic (expected 0x00000801): " + labels_path);
  const std::uint32_t count = be32(img, 4);
  const std::uint32_t rows = be32(img, 8);
  const std::uint32_t cols = be32(img, 12);
  if (be32(lab, 4) != count) throw DataError("image/label count mismatch");
  const std::size_t pix = static_cast<std::size_t>(count) * rows * cols;
  if (img.size() != 16 + pix) throw DataError("image payload size mismatch: " + images_path);
  if (lab.size() != 8 + count) throw DataError("label payload size mismatch: " + labels_path);

  Dataset d;
  d.T = static_cast<Eigen::Index>(rows) * cols;
  d.classes = 10;
  d.inputs.resize(static_cast<Eigen::Index>(count) * d.T, 1);
  d.labels.resize(count);
  for (std::uint32_t s = 0; s < count; ++s) {
    d.labels[s] = static_cast<int>(lab[8 + s]);
    if (d.labels[s] > 9) throw DataError("label out of range in " + labels_path);
    for (Eigen::Index t = 0; t < d.T; ++t)
      d.inputs(static_cast<Eigen::Index>(s) * d.T + t, 0) =
          static_cast<double>(img[16 + static_cast<std::size_t>(s) * d.T + t]);
  }
  return d;
}

void normalize_train_eval(Dataset& train, Dataset& eval) {
  if (train.inputs.size() == 0) throw DataError("normalize: empty train split");
  const double mean = train.inputs.mean();
  const double var = (train.inputs.array() - mean).square().mean();
  const double sd = std::sqrt(std::max(var, 1e-24));
  train.inputs = ((train.inputs.array() - mean) / sd).matrix();
  if (eval.inputs.size() > 0) eval.inputs = ((eval.inputs.array() - mean) / sd).matrix();
}

Dataset subset(const Dataset& d, Eigen::Index count, std::uint64_t seed) {
  if (count > d.size()) count = d.size();
  std::vector<Eigen::Index> idx(d.size());
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  Rng rng(seed ^ 0x2545f4914f6cdd1dull);
  rng.shuffle(idx);
  Dataset out;
  out.T = d.T;
  out.classes = d.classes;
  out.inputs.resize(count * d.T, d.input_dim());
  out.labels.resize(count);
  for (Eigen::Index s = 0; s < count; ++s) {
    out.labels[s] = d.labels[idx[s]];
    out.inputs.middleRows(s * d.T, d.T) = d.inputs.middleRows(idx[s] * d.T, d.T);
  }
  return out;
}

}  // namespace ssmkit::io
