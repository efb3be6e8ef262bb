#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "ssmkit/net.hpp"

namespace ssmkit::io {

// Dataset-level failures (missing/corrupt files, header mismatches); the CLI
// maps these to its data exit code.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Built-in generator: each class is a distinct base frequency; every
// sequence is a noisy sinusoid with random phase plus a delayed copy of
// itself (echo), so that classification is easy but benefits from memory.
struct SynthConfig {
  int classes = 10;
  Eigen::Index T = 100;
  Eigen::Index train_count = 2000;
  Eigen::Index eval_count = 500;
  double noise = 0.4;
  double echo_coeff = 0.5;
  int echo_delay_min = 5;
  int echo_delay_max = 10;
  std::uint64_t seed = 0;
};

struct SplitPair {
  Dataset train, eval;
};

SplitPair make_synthetic(const SynthConfig& cfg);

// Standard IDX pair (big-endian headers, magic 0x803 for images and 0x801
// for labels). Returns raw pixel values in [0, 255] flattened row-major to
// one scalar per step.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// Zero mean / unit variance using statistics of the train split only.
void normalize_train_eval(Dataset& train, Dataset& eval);

// Deterministic random subset (used for the toy split).
Dataset subset(const Dataset& d, Eigen::Index count, std::uint64_t seed);

}  // namespace ssmkit::io
