#pragma once

// Experiment configuration: one nested JSON document per run. Every key has a
// default (see default_config_json); files and `--set a.b=value` overrides are
// merged on top and unknown keys are rejected with their dotted path.

#include "kser/data.hpp"
#include "kser/knowledge.hpp"
#include "kser/model.hpp"
#include "kser/synthetic.hpp"
#include "kser/training.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace kser {

using ordered_json = nlohmann::ordered_json;

struct DatasetConfig {
  /// movielens | amazon_book | synthetic
  std::string kind = "synthetic";
  /// Interaction TSV (movielens / amazon_book).
  std::string path;
  /// Directory written by `kser prepare`; takes precedence over `path`.
  std::string cache;
  std::size_t h_max = 30;
  /// Tokens seen fewer times in the training split map to OOV.
  std::size_t min_count = 2;
  SplitRatios split;
  SyntheticSpec synthetic;
  std::uint64_t synthetic_seed = 7;
};

struct KnowledgeConfig {
  /// Pack directory. Empty: the generated pack for synthetic data, otherwise
  /// no knowledge (base training only).
  std::string path;
  MissingKeyPolicy missing = MissingKeyPolicy::ZeroFill;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  KnowledgeConfig knowledge;
  ModelConfig model;
  TrainConfig train;
  /// Learning rates to search; empty trains at train.lr only.
  std::vector<double> lr_grid;
  std::string base_checkpoint;
  Ablation ablation = Ablation::None;
  /// Checkpoint read by evaluate and diagnostics.
  std::string checkpoint;
  std::string eval_split = "test";
  std::size_t diagnostics_samples = 10;
  /// Variants run by ablate, in table order.
  std::vector<Ablation> ablate_variants = {Ablation::None, Ablation::NoEsfnet, Ablation::NoEsa};
  Strategy ablate_strategy = Strategy::ExtractorOnly;

  /// The merged document this config was parsed from.
  ordered_json echo;
};

ordered_json default_config_json();

/// Sets `dotted` (e.g. "train.lr") in `doc`. The value text is parsed as JSON
/// when possible and taken as a string otherwise.
void apply_override(ordered_json& doc, const std::string& dotted, const std::string& value);

/// Defaults <- file (if non-empty) <- overrides ("key=value"), then validated.
ExperimentConfig load_config(const std::filesystem::path& file, const std::vector<std::string>& overrides);

/// Validates a merged document and converts it.
ExperimentConfig parse_config(const ordered_json& doc);

ordered_json to_json(const ModelConfig& m);
ModelConfig model_config_from_json(const ordered_json& doc);

std::string to_string(MissingKeyPolicy p);

}  // namespace kser
