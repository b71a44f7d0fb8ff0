#pragma once

// Checkpoint directory layout:
//   meta.json           schema hash, strategy, ablation, widths, model config,
//                       parameter table (name, rows, cols, trainable)
//   params/<name>.f32   row-major little-endian float32
//   vocab/<field>.txt   one token per line, index = line + 2

#include "kser/config.hpp"
#include "kser/model.hpp"

#include <filesystem>
#include <optional>

namespace kser {

struct CheckpointInfo {
  Strategy strategy = Strategy::Base;
  Ablation ablation = Ablation::None;
  ModelConfig model;
  FeatureVocab vocab;
  int dk = 0;
  int num_fields = 0;
  std::uint64_t schema_hash = 0;
  /// Config document of the run that wrote the checkpoint.
  ordered_json config;
};

struct LoadedCheckpoint {
  CheckpointInfo info;
  KserModel model;
};

void save_checkpoint(const std::filesystem::path& dir, KserModel& model, const CheckpointInfo& info);

/// Rebuilds the model and loads its parameters. With `expected_hash`, a
/// schema mismatch is a ValidationError.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir,
                                 std::optional<std::uint64_t> expected_hash = std::nullopt);

/// Rounds every parameter to float32 precision, matching what a checkpoint
/// stores.
void round_to_f32(KserModel& model);

}  // namespace kser
