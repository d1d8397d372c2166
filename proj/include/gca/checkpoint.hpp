#pragma once
// Checkpoint container: a fixed magic line, the manifest length, a JSON
// manifest (model config, validation stats, ordered tensor directory with
// byte offsets) and one little-endian f32 blob. Save/load round-trips are
// bitwise exact, so a checkpoint is also a determinism witness.

#include <limits>
#include <string>

#include "gca/model.hpp"
#include "gca/params.hpp"

namespace gca {

struct CheckpointMeta {
  ModelConfig model;
  double val_loss = std::numeric_limits<double>::quiet_NaN();
  double val_mdsc = std::numeric_limits<double>::quiet_NaN();
  Index epoch = -1;
};

void save_checkpoint(const std::string& path, const ParamRegistry<float>& reg,
                     const CheckpointMeta& meta);

// Manifest only; use it to rebuild the model before loading tensors.
CheckpointMeta peek_checkpoint(const std::string& path);

// Fills the registered tensors in place. The tensor directory must match the
// registry exactly (same names, shapes and order).
CheckpointMeta load_checkpoint(const std::string& path, ParamRegistry<float>& reg);

}  // namespace gca
