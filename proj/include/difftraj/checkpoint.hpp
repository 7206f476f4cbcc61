#pragma once

#include <memory>
#include <string>

#include "difftraj/diffusion.hpp"
#include "difftraj/predictor.hpp"

namespace difftraj::model {

struct CheckpointMeta {
  uint64_t seed = 0;
  int64_t steps = 0;
  double val_ade = 0.0;
};

// Versioned container: a small JSON header (config, schedule, metadata,
// parameter manifest) followed by the raw little-endian double blob, so
// save/load round-trips are bitwise.
void save_checkpoint(const std::string& path, const Predictor& model,
                     const diffusion::DiffusionSchedule& sched, const CheckpointMeta& meta);

struct LoadedCheckpoint {
  std::unique_ptr<Predictor> model;
  diffusion::DiffusionSchedule schedule;
  CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace difftraj::model
