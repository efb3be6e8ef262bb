#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "ssmkit/net.hpp"

namespace ssmkit::io {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Everything needed to resume or evaluate a run: the model (with its
// config embedded), optionally the optimizer moments, and the data-order /
// dropout rng states as text.
struct Checkpoint {
  SequenceModel model;
  bool has_optimizer = false;
  AdamState optimizer;
  std::string order_rng;
  std::string dropout_rng;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Binary container: 8-byte magic, u32 version, length-prefixed JSON config,
// then tensors as (dtype u8, rows u64, cols u64, payload) with f64
// little-endian payloads in column-major order; complex tensors interleave
// (re, im). A human-readable JSON sidecar of the config is written next to
// the file at path + ".json". Save/load/save is byte-identical.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Config (de)serialization shared by the sidecar and --config files.
std::string config_to_json(const TrainConfig& cfg);
TrainConfig config_from_json(const std::string& text);

}  // namespace ssmkit::io
