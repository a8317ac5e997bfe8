#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "atd/model.hpp"
#include "atd/train.hpp"

namespace atd {

// Versioned little-endian binary checkpoint: model config, named parameter
// table, optional optimizer moments, RNG state, and iteration counter.
// Round trips are bit-exact; version or magic mismatches are rejected with
// a message.
inline constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointExtras {
  uint64_t iteration = 0;
  std::string rng_state;
  std::optional<AdamWState> optimizer;
};

void save_checkpoint(const std::string& path, const Model& model, const CheckpointExtras& extras);

// Reads the config, rebuilds the model, and fills every named parameter.
Model load_checkpoint(const std::string& path, CheckpointExtras* extras = nullptr);

}  // namespace atd
