#pragma once

#include "kser/backbones.hpp"
#include "kser/esa.hpp"
#include "kser/esfnet.hpp"

#include <optional>
#include <string>
#include <vector>

namespace kser {

enum class Strategy { Base, AllParams, ExtractorOnly };
enum class Ablation { None, NoEsfnet, NoEsa };

Strategy parse_strategy(const std::string& s);
std::string to_string(Strategy s);
Ablation parse_ablation(const std::string& s);
std::string to_string(Ablation a);

struct ModelConfig {
  BackboneConfig backbone;
  int field_width = 8;
  EsfnetConfig esfnet;
  EsaConfig esa;
};

/// ESFNet followed by ESA, with the two ablation variants: no_esfnet feeds the
/// raw knowledge to ESA; no_esa replaces ESA by one affine map from vec(kbar)
/// to ESA's output width.
class Extractor {
 public:
  Extractor() = default;
  Extractor(Ablation ablation, int dk, int num_fields, int feat_width, int item_width, const ModelConfig& cfg,
            Rng& rng);

  struct Output {
    Var out;
    Var filtered;
    Var gate_weights;  // invalid without ESFNet
    std::vector<Mat> cross_scores;
    Mat fusion_scores;
  };

  Output forward(Graph& g, Var knowledge, const EmbeddedBatch& e);

  int output_width() const { return output_width_; }
  Ablation ablation() const { return ablation_; }
  std::optional<Esfnet>& esfnet() { return esfnet_; }
  std::optional<Esa>& esa() { return esa_; }
  void collect(std::vector<Parameter*>& out);

 private:
  Ablation ablation_ = Ablation::None;
  QueryStrategy query_ = QueryStrategy::HistoryItem;
  std::optional<Esfnet> esfnet_;
  std::optional<Esa> esa_;
  std::optional<Dense> projection_;
  int output_width_ = 0;
};

class KserModel {
 public:
  /// Embedding + trunk + head, no knowledge.
  static KserModel make_base(const ModelConfig& cfg, const FeatureSchema& schema, Rng& rng);
  /// Knowledge output concatenated ahead of E(x) at the trunk input; all
  /// parameters trainable.
  static KserModel make_all_params(const ModelConfig& cfg, const FeatureSchema& schema, int dk, int num_fields,
                                   Ablation ablation, Rng& rng);
  /// Trunk copied from `base` and frozen; embedding warm-started; head widened
  /// with a zero-initialised knowledge slice.
  static KserModel make_extractor_only(const KserModel& base, const ModelConfig& cfg, int dk, int num_fields,
                                       Ablation ablation, Rng& rng);

  struct Forward {
    Var logits;
    EmbeddedBatch embedded;
    std::optional<Extractor::Output> extractor;
  };

  Forward forward(Graph& g, const Batch& batch);

  Strategy strategy() const { return strategy_; }
  EmbeddingLayer& embedding() { return embedding_; }
  Backbone& backbone() { return backbone_; }
  PredictionHead& head() { return head_; }
  std::optional<Extractor>& extractor() { return extractor_; }

  std::vector<Parameter*> parameters();
  std::vector<Parameter*> trunk_parameters();

 private:
  Strategy strategy_ = Strategy::Base;
  EmbeddingLayer embedding_;
  Backbone backbone_;
  PredictionHead head_;
  std::optional<Extractor> extractor_;
};

}  // namespace kser
