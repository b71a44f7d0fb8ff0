#pragma once

#include "kser/data.hpp"
#include "kser/knowledge.hpp"
#include "kser/metrics.hpp"
#include "kser/model.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace kser {

/// One encoded split with its assembled knowledge rows.
struct SplitData {
  EncodedSet encoded;
  Mat knowledge;  // n x (L*d_k); empty when no pack is attached
  std::vector<std::uint8_t> knowledge_missing;

  std::size_t size() const { return encoded.n; }
};

struct TrainingData {
  FeatureVocab vocab;
  FeatureSchema schema;
  int field_width = 8;
  int dk = 0;
  int num_fields = 0;
  SplitData train, val, test;
};

/// Encodes the three splits against `vocab` (default: a vocabulary frozen on
/// `splits.train` with the given min_count) and, when `pack` is given,
/// assembles their knowledge.
TrainingData prepare_training_data(const SplitSets& splits, int field_width, const KnowledgePack* pack,
                                   MissingKeyPolicy policy, const FeatureVocab* vocab = nullptr,
                                   std::size_t min_count = 1);

Batch make_batch(const SplitData& split, std::span<const std::size_t> rows);

struct TrainConfig {
  Strategy strategy = Strategy::Base;
  double lr = 1e-3;
  int batch_size = 256;
  int max_epochs = 20;
  int patience = 3;
  /// Stop after this many optimizer steps in total (0 = no limit).
  long max_steps = 0;
  std::uint64_t seed = 42;
};

/// The learning-rate grid searched when `train.lr_grid` is set to it.
inline const std::vector<double> kLearningRateGrid = {1e-4, 5e-4, 1e-3};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_auc = 0.0;
  double val_logloss = 0.0;
};

struct Evaluation {
  double auc = 0.0;
  double logloss = 0.0;
};

struct MetricsReport {
  /// Test-split metrics of the restored best-validation parameters.
  double auc = 0.0;
  double logloss = 0.0;
  double val_auc = 0.0;
  double val_logloss = 0.0;
  int best_epoch = 0;
  long steps = 0;
  double lr = 0.0;
  double wall_clock_seconds = 0.0;
  std::vector<EpochRecord> history;
};

class Adam {
 public:
  Adam(std::vector<Parameter*> params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void zero_grad();
  void step();

 private:
  std::vector<Parameter*> params_;
  std::vector<Mat> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

/// Called after every optimizer step with the running step count.
using StepHook = std::function<void(KserModel&, long step)>;

/// Minibatch training on binary cross-entropy with early stopping on
/// validation AUC; the best-validation parameters are restored at the end.
MetricsReport fit(KserModel& model, const TrainingData& data, const TrainConfig& cfg, const StepHook& hook = {});

std::vector<double> predict(KserModel& model, const SplitData& split, int batch_size = 1024);
Evaluation evaluate(KserModel& model, const SplitData& split);

struct TrainedModel {
  KserModel model;
  MetricsReport report;
};

TrainedModel train_base(const TrainConfig& cfg, const TrainingData& data, const ModelConfig& mcfg,
                        const StepHook& hook = {});
TrainedModel train_all_params(const TrainConfig& cfg, const TrainingData& data, const ModelConfig& mcfg,
                              Ablation ablation = Ablation::None, const StepHook& hook = {});
/// The base model's trunk parameters are left bit-identical.
TrainedModel train_extractor_only(const TrainConfig& cfg, const TrainingData& data, const ModelConfig& mcfg,
                                  const KserModel& base, Ablation ablation = Ablation::None,
                                  const StepHook& hook = {});

/// Largest absolute entry of the embedding-table gradients produced by a loss
/// that depends on the gate weights only. Zero under the stop-gradient contract.
double gate_path_embedding_gradient(KserModel& model, const Batch& batch);

/// FNV-1a over the raw bytes of the given parameters' values.
std::uint64_t checksum(const std::vector<Parameter*>& params);

}  // namespace kser
