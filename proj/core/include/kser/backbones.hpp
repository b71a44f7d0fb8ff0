#pragma once

// Feature embedding layer E, backbone trunks M' and the logistic prediction
// head. A backbone always factors as head(trunk(embed(x))); the all-parameters
// strategy widens the trunk input with the aligned knowledge and the
// extractor-only strategy widens the head input instead.

#include "kser/autograd.hpp"
#include "kser/data.hpp"
#include "kser/nn.hpp"

#include <span>
#include <string>
#include <vector>

namespace kser {

/// A mini-batch of encoded samples. `fields` is size x n_fields, `history`
/// is size x history_length, `knowledge` is size x (L*d_k).
struct Batch {
  std::size_t size = 0;
  std::size_t n_fields = 0;
  std::size_t history_length = 0;
  std::vector<int> fields;
  std::vector<int> history;
  Mat knowledge;
  std::vector<double> labels;
};

struct EmbeddedBatch {
  Var flat;                // B x d_e, E(x)
  std::vector<Var> fields; // categorical field embeddings, B x w each
  Var history;             // (B*H) x w item embeddings (pad rows are zero)
  std::vector<std::uint8_t> history_mask;
  long history_length = 0;
  Var history_mean;        // B x w
  Var target_item;         // B x w
};

class EmbeddingLayer {
 public:
  EmbeddingLayer() = default;
  /// `item_field` names the categorical field whose table the history shares.
  EmbeddingLayer(const FeatureSchema& schema, Rng& rng, const std::string& item_field = "item_id");

  EmbeddedBatch forward(Graph& g, const Batch& batch);

  int width() const { return width_; }
  int field_width() const { return field_width_; }
  std::size_t num_categorical() const { return tables_.size(); }
  bool has_history() const { return has_history_; }
  std::vector<Parameter>& tables() { return tables_; }
  void collect(std::vector<Parameter*>& out);

 private:
  std::vector<Parameter> tables_;
  std::size_t item_field_ = 1;
  bool has_history_ = false;
  int width_ = 0;
  int field_width_ = 0;
};

enum class BackboneKind { Mlp, DeepFmLite, DinLite };

BackboneKind parse_backbone_kind(const std::string& s);
std::string to_string(BackboneKind k);

struct BackboneConfig {
  BackboneKind kind = BackboneKind::Mlp;
  std::vector<int> hidden = {128, 64};
  int din_attention_hidden = 16;
};

/// Trunk M': everything between the embedding layer and the output affine.
class Backbone {
 public:
  Backbone() = default;
  /// `extra_width` > 0 prepends that many input columns (the all-parameters
  /// knowledge input) to the trunk's MLP tower.
  Backbone(const BackboneConfig& cfg, const EmbeddingLayer& embedding, int extra_width, Rng& rng);

  /// `extra` is ignored (and may be invalid) when extra_width() == 0.
  Var trunk(Graph& g, const EmbeddedBatch& e, Var extra = {});

  int trunk_width() const { return trunk_width_; }
  int extra_width() const { return extra_width_; }
  BackboneKind kind() const { return cfg_.kind; }
  const BackboneConfig& config() const { return cfg_; }
  std::vector<Dense>& tower() { return tower_; }
  Dense& attention_hidden() { return att_hidden_; }
  Dense& attention_out() { return att_out_; }

  void collect(std::vector<Parameter*>& out);

  /// DIN-lite target attention weights over history positions (B x H).
  Var din_attention(Graph& g, const EmbeddedBatch& e);

 private:
  BackboneConfig cfg_;
  int extra_width_ = 0;
  int trunk_width_ = 0;
  std::vector<Dense> tower_;
  Dense att_hidden_;
  Dense att_out_;
};

/// ACT(Dense(vec(o) ++ trunk)) with ACT the logistic function. The knowledge
/// slice comes first; knowledge_width() == 0 for the plain backbone head.
class PredictionHead {
 public:
  PredictionHead() = default;
  PredictionHead(int knowledge_width, int trunk_width, Rng& rng);

  /// Logits (B x 1). `o_flat` is ignored when knowledge_width() == 0.
  Var logits(Graph& g, Var trunk_out, Var o_flat = {});

  int knowledge_width() const { return knowledge_width_; }
  int trunk_width() const { return trunk_width_; }
  Dense& affine() { return affine_; }

  /// Head for the extractor-only model: the trunk slice is copied from
  /// `base` and the knowledge slice starts at zero.
  static PredictionHead warm_start(const PredictionHead& base, int knowledge_width);

  void collect(std::vector<Parameter*>& out) { affine_.collect(out); }

 private:
  Dense affine_;
  int knowledge_width_ = 0;
  int trunk_width_ = 0;
};

/// Logistic of the full backbone: head(trunk(e)).
Var forward_full(Graph& g, Backbone& backbone, PredictionHead& head, const EmbeddedBatch& e, Var extra = {});

double logistic(double x);

/// Single-sample head: logistic(affine(o_flat ++ trunk_out)).
double head_with_knowledge(std::span<const double> trunk_out, std::span<const double> o_flat,
                           PredictionHead& head);

}  // namespace kser
