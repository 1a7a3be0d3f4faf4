#pragma once

#include <filesystem>

#include "cfrec/model.hpp"

namespace cfrec {

/// A trained model together with the configuration that produced it.
struct Checkpoint {
  Model model;
  TrainConfig train;
};

/// Writes <dir>/model.json (shape and training config) and <dir>/model.bin
/// (every parameter as a little-endian IEEE-754 double, in layout order).
/// Creates dir if needed.
void save_checkpoint(const Model& model, const TrainConfig& train, const std::filesystem::path& dir);

/// Reads a checkpoint written by save_checkpoint. Parameters round-trip
/// bit-exactly, so forward() outputs match the saved model exactly.
/// Throws InputError on missing files, bad manifests or size mismatches.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace cfrec
