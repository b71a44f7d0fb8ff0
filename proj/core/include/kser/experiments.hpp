#pragma once

// Command implementations behind the `kser` executable. Each command writes
// into its own output directory, guarded by a lockfile, and reports failures
// as ValidationError / DataError / DivergenceError.

#include "kser/checkpoint.hpp"
#include "kser/config.hpp"
#include "kser/training.hpp"

#include <filesystem>
#include <optional>

namespace kser {

/// Holds `<dir>/.kser.lock` for the lifetime of the object.
class OutputLock {
 public:
  explicit OutputLock(const std::filesystem::path& dir);
  ~OutputLock();
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  std::filesystem::path path_;
};

struct LoadedData {
  SplitSets splits;
  std::optional<KnowledgePack> pack;
};

/// Loads, builds histories and splits the configured dataset, attaching the
/// configured (or generated) knowledge pack.
LoadedData load_dataset(const ExperimentConfig& cfg);

/// Binary sample cache written by `prepare`.
void write_sample_cache(const SampleSet& set, const std::filesystem::path& path);
SampleSet read_sample_cache(const std::filesystem::path& path);

struct TrainOutcome {
  TrainedModel trained;
  CheckpointInfo info;
  /// Test metrics of the frozen base model (extractor_only only).
  std::optional<Evaluation> base_test;
  /// (learning rate, best val AUC) per grid point.
  std::vector<std::pair<double, double>> lr_search;
};

/// Trains as configured, searching cfg.lr_grid when non-empty. Parameters are
/// rounded to checkpoint precision and re-evaluated before returning.
TrainOutcome run_training(const ExperimentConfig& cfg, const TrainingData& data, const KserModel* base);

ordered_json report_json(const ExperimentConfig& cfg, const TrainOutcome& outcome, const TrainingData& data);

void cmd_prepare(const ExperimentConfig& cfg, const std::filesystem::path& out);
void cmd_gen_synth(const ExperimentConfig& cfg, const std::filesystem::path& out);
void cmd_train(const ExperimentConfig& cfg, const std::filesystem::path& out);
void cmd_evaluate(const ExperimentConfig& cfg, const std::filesystem::path& out);
void cmd_ablate(const ExperimentConfig& cfg, const std::filesystem::path& out);
void cmd_diagnostics(const ExperimentConfig& cfg, const std::filesystem::path& out);

}  // namespace kser
