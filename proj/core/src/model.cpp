#include "kser/model.hpp"

#include "kser/error.hpp"

namespace kser {

Strategy parse_strategy(const std::string& s) {
  if (s == "base") return Strategy::Base;
  if (s == "all_params") return Strategy::AllParams;
  if (s == "extractor_only") return Strategy::ExtractorOnly;
  throw ValidationError("unknown strategy '" + s + "' (expected base, all_params or extractor_only)");
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::Base: return "base";
    case Strategy::AllParams: return "all_params";
    default: return "extractor_only";
  }
}

Ablation parse_ablation(const std::string& s) {
  if (s == "none") return Ablation::None;
  if (s == "no_esfnet") return Ablation::NoEsfnet;
  if (s == "no_esa") return Ablation::NoEsa;
  throw ValidationError("unknown ablation '" + s + "' (expected none, no_esfnet or no_esa)");
}

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::None: return "none";
    case Ablation::NoEsfnet: return "no_esfnet";
    default: return "no_esa";
  }
}

// ---- extractor ----------------------------------------------------------------

Extractor::Extractor(Ablation ablation, int dk, int num_fields, int feat_width, int item_width,
                     const ModelConfig& cfg, Rng& rng)
    : ablation_(ablation), query_(cfg.esa.query) {
  // Each component draws from its own stream so that ablating one leaves the
  // others' initial weights unchanged.
  Rng esfnet_rng = rng.fork(1);
  Rng esa_rng = rng.fork(2);
  if (ablation != Ablation::NoEsfnet) esfnet_.emplace(dk, num_fields, feat_width, cfg.esfnet, esfnet_rng);

  const int query_width = query_ == QueryStrategy::HistoryItem ? 2 * item_width : feat_width;
  Esa esa(dk, num_fields, query_width, feat_width, cfg.esa, esa_rng);
  output_width_ = esa.output_width();
  if (ablation == Ablation::NoEsa) {
    projection_ = Dense("no_esa.proj", static_cast<long>(dk) * num_fields, output_width_, esa_rng);
  } else {
    esa_ = std::move(esa);
  }
}

void Extractor::collect(std::vector<Parameter*>& out) {
  if (esfnet_) esfnet_->collect(out);
  if (esa_) esa_->collect(out);
  if (projection_) projection_->collect(out);
}

Extractor::Output Extractor::forward(Graph& g, Var knowledge, const EmbeddedBatch& e) {
  Output out;
  out.filtered = knowledge;
  if (esfnet_) {
    const auto f = esfnet_->forward(g, knowledge, e.flat);
    out.filtered = f.filtered;
    out.gate_weights = f.weights;
  }
  if (projection_) {
    out.out = (*projection_)(g, out.filtered);
    return out;
  }
  Var query;
  if (query_ == QueryStrategy::HistoryItem) {
    if (!e.history_mean.valid()) throw ValidationError("esa.query=history_item needs a history field");
    const Var parts[] = {e.history_mean, e.target_item};
    query = concat_cols(parts);
  } else {
    query = e.flat;
  }
  auto r = esa_->forward(g, out.filtered, query);
  out.out = r.out;
  out.cross_scores = std::move(r.cross_scores);
  out.fusion_scores = std::move(r.fusion_scores);
  return out;
}

// ---- model --------------------------------------------------------------------

KserModel KserModel::make_base(const ModelConfig& cfg, const FeatureSchema& schema, Rng& rng) {
  KserModel m;
  m.strategy_ = Strategy::Base;
  Rng emb_rng = rng.fork(10), trunk_rng = rng.fork(11), head_rng = rng.fork(12);
  m.embedding_ = EmbeddingLayer(schema, emb_rng);
  m.backbone_ = Backbone(cfg.backbone, m.embedding_, 0, trunk_rng);
  m.head_ = PredictionHead(0, m.backbone_.trunk_width(), head_rng);
  return m;
}

KserModel KserModel::make_all_params(const ModelConfig& cfg, const FeatureSchema& schema, int dk, int num_fields,
                                     Ablation ablation, Rng& rng) {
  KserModel m;
  m.strategy_ = Strategy::AllParams;
  Rng emb_rng = rng.fork(10), trunk_rng = rng.fork(11), head_rng = rng.fork(12), ext_rng = rng.fork(13);
  m.embedding_ = EmbeddingLayer(schema, emb_rng);
  m.extractor_.emplace(ablation, dk, num_fields, m.embedding_.width(), m.embedding_.field_width(), cfg, ext_rng);
  m.backbone_ = Backbone(cfg.backbone, m.embedding_, m.extractor_->output_width(), trunk_rng);
  m.head_ = PredictionHead(0, m.backbone_.trunk_width(), head_rng);
  return m;
}

KserModel KserModel::make_extractor_only(const KserModel& base, const ModelConfig& cfg, int dk, int num_fields,
                                         Ablation ablation, Rng& rng) {
  if (base.strategy_ != Strategy::Base) throw ValidationError("extractor-only training needs a base model");
  KserModel m;
  m.strategy_ = Strategy::ExtractorOnly;
  m.embedding_ = base.embedding_;
  m.backbone_ = base.backbone_;
  Rng ext_rng = rng.fork(13);
  m.extractor_.emplace(ablation, dk, num_fields, m.embedding_.width(), m.embedding_.field_width(), cfg, ext_rng);
  m.head_ = PredictionHead::warm_start(base.head_, m.extractor_->output_width());
  for (Parameter* p : m.trunk_parameters()) p->trainable = false;
  return m;
}

KserModel::Forward KserModel::forward(Graph& g, const Batch& batch) {
  Forward f;
  f.embedded = embedding_.forward(g, batch);
  if (!extractor_) {
    f.logits = head_.logits(g, backbone_.trunk(g, f.embedded));
    return f;
  }
  if (batch.knowledge.rows() != static_cast<long>(batch.size)) throw DataError("batch has no knowledge rows");
  f.extractor = extractor_->forward(g, g.constant(batch.knowledge), f.embedded);
  if (strategy_ == Strategy::AllParams) {
    f.logits = head_.logits(g, backbone_.trunk(g, f.embedded, f.extractor->out));
  } else {
    f.logits = head_.logits(g, backbone_.trunk(g, f.embedded), f.extractor->out);
  }
  return f;
}

std::vector<Parameter*> KserModel::parameters() {
  std::vector<Parameter*> out;
  embedding_.collect(out);
  if (extractor_) extractor_->collect(out);
  backbone_.collect(out);
  head_.collect(out);
  return out;
}

std::vector<Parameter*> KserModel::trunk_parameters() {
  std::vector<Parameter*> out;
  backbone_.collect(out);
  return out;
}

}  // namespace kser
