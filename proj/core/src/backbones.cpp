#include "kser/backbones.hpp"

#include "kser/error.hpp"

#include <cmath>

namespace kser {

BackboneKind parse_backbone_kind(const std::string& s) {
  if (s == "mlp") return BackboneKind::Mlp;
  if (s == "deepfm_lite") return BackboneKind::DeepFmLite;
  if (s == "din_lite") return BackboneKind::DinLite;
  throw ValidationError("unknown backbone '" + s + "' (expected mlp, deepfm_lite or din_lite)");
}

std::string to_string(BackboneKind k) {
  switch (k) {
    case BackboneKind::Mlp: return "mlp";
    case BackboneKind::DeepFmLite: return "deepfm_lite";
    default: return "din_lite";
  }
}

double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// ---- embedding ------------------------------------------------------------------

EmbeddingLayer::EmbeddingLayer(const FeatureSchema& schema, Rng& rng, const std::string& item_field) {
  std::optional<std::size_t> item;
  for (const auto& f : schema.fields()) {
    if (f.kind == FieldKind::ItemSequence) {
      has_history_ = true;
      continue;
    }
    if (field_width_ == 0) field_width_ = f.width;
    if (f.width != field_width_) throw ValidationError("all categorical fields must share one embedding width");
    if (f.name == item_field) item = tables_.size();
    Mat t(f.vocab_size, f.width);
    for (long i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(-0.05, 0.05);
    t.row(0).setZero();
    Parameter p("embedding." + f.name, std::move(t));
    p.pad_row = true;
    tables_.push_back(std::move(p));
  }
  if (tables_.empty()) throw ValidationError("schema has no categorical fields");
  if (has_history_) {
    if (!item) throw ValidationError("history field needs a categorical field named " + item_field);
    const auto seq = schema.fields()[*schema.sequence_field()];
    if (seq.width != field_width_ || seq.vocab_size != schema.fields()[*schema.find(item_field)].vocab_size)
      throw ValidationError("history field must match the item field's vocabulary and width");
  }
  item_field_ = item.value_or(0);
  width_ = schema.embedding_width();
}

void EmbeddingLayer::collect(std::vector<Parameter*>& out) {
  for (auto& t : tables_) out.push_back(&t);
}

EmbeddedBatch EmbeddingLayer::forward(Graph& g, const Batch& batch) {
  if (batch.n_fields != tables_.size()) throw DataError("batch field count does not match the schema");
  EmbeddedBatch e;
  const std::size_t b = batch.size;
  std::vector<int> idx(b);
  for (std::size_t f = 0; f < tables_.size(); ++f) {
    for (std::size_t i = 0; i < b; ++i) idx[i] = batch.fields[i * batch.n_fields + f];
    e.fields.push_back(embedding_lookup(g, tables_[f], idx));
  }
  e.target_item = e.fields[item_field_];
  std::vector<Var> parts = e.fields;
  if (has_history_) {
    if (batch.history_length == 0) throw DataError("batch carries no history");
    e.history_length = static_cast<long>(batch.history_length);
    e.history = embedding_lookup(g, tables_[item_field_], batch.history);
    e.history_mask.resize(batch.history.size());
    for (std::size_t i = 0; i < batch.history.size(); ++i) e.history_mask[i] = batch.history[i] != Vocabulary::kPad;
    e.history_mean = masked_mean_groups(e.history, e.history_mask, e.history_length);
    parts.push_back(e.history_mean);
  }
  e.flat = concat_cols(parts);
  return e;
}

// ---- backbone -----------------------------------------------------------------------

Backbone::Backbone(const BackboneConfig& cfg, const EmbeddingLayer& embedding, int extra_width, Rng& rng)
    : cfg_(cfg), extra_width_(extra_width) {
  if (cfg.hidden.empty()) throw ValidationError("model.hidden must list at least one layer");
  if (cfg.kind == BackboneKind::DinLite && !embedding.has_history())
    throw ValidationError("din_lite needs a history field");
  const int w = embedding.field_width();
  if (cfg.kind == BackboneKind::DinLite) {
    att_hidden_ = Dense("trunk.din_att1", 4L * w, cfg.din_attention_hidden, rng);
    att_out_ = Dense("trunk.din_att2", cfg.din_attention_hidden, 1, rng);
  }
  long in = extra_width + embedding.width();
  for (std::size_t i = 0; i < cfg.hidden.size(); ++i) {
    if (cfg.hidden[i] < 1) throw ValidationError("hidden layer widths must be positive");
    tower_.emplace_back("trunk.tower" + std::to_string(i), in, cfg.hidden[i], rng);
    in = cfg.hidden[i];
  }
  trunk_width_ = static_cast<int>(in) + (cfg.kind == BackboneKind::DeepFmLite ? 1 : 0);
}

void Backbone::collect(std::vector<Parameter*>& out) {
  if (cfg_.kind == BackboneKind::DinLite) {
    att_hidden_.collect(out);
    att_out_.collect(out);
  }
  for (auto& d : tower_) d.collect(out);
}

Var Backbone::din_attention(Graph& g, const EmbeddedBatch& e) {
  const long h = e.history_length;
  const Var target = repeat_rows(e.target_item, h);
  const Var feats[] = {e.history, target, sub(e.history, target), mul(e.history, target)};
  const Var score = att_out_(g, relu(att_hidden_(g, concat_cols(feats))));
  return masked_softmax(reshape(score, e.target_item.rows(), h), e.history_mask);
}

Var Backbone::trunk(Graph& g, const EmbeddedBatch& e, Var extra) {
  std::vector<Var> inputs;
  if (extra_width_ > 0) {
    if (!extra.valid() || extra.cols() != extra_width_) throw DataError("trunk knowledge input width mismatch");
    inputs.push_back(extra);
  }
  if (cfg_.kind == BackboneKind::DinLite) {
    inputs.insert(inputs.end(), e.fields.begin(), e.fields.end());
    inputs.push_back(weighted_sum_groups(din_attention(g, e), e.history));
  } else {
    inputs.push_back(e.flat);
  }
  Var x = concat_cols(inputs);
  for (auto& layer : tower_) x = relu(layer(g, x));
  if (cfg_.kind != BackboneKind::DeepFmLite) return x;

  // Second-order FM term over all field embeddings (pooled history included).
  std::vector<Var> fm_fields = e.fields;
  if (e.history_mean.valid()) fm_fields.push_back(e.history_mean);
  Var sum = fm_fields[0];
  Var sq = mul(fm_fields[0], fm_fields[0]);
  for (std::size_t i = 1; i < fm_fields.size(); ++i) {
    sum = add(sum, fm_fields[i]);
    sq = add(sq, mul(fm_fields[i], fm_fields[i]));
  }
  const Var fm = scale(row_sum(sub(mul(sum, sum), sq)), 0.5);
  const Var parts[] = {x, fm};
  return concat_cols(parts);
}

// ---- head -----------------------------------------------------------------------------

PredictionHead::PredictionHead(int knowledge_width, int trunk_width, Rng& rng)
    : affine_("head", knowledge_width + trunk_width, 1, rng),
      knowledge_width_(knowledge_width),
      trunk_width_(trunk_width) {}

Var PredictionHead::logits(Graph& g, Var trunk_out, Var o_flat) {
  if (trunk_out.cols() != trunk_width_) throw DataError("head trunk width mismatch");
  if (knowledge_width_ == 0) return affine_(g, trunk_out);
  if (!o_flat.valid() || o_flat.cols() != knowledge_width_) throw DataError("head knowledge width mismatch");
  const Var parts[] = {o_flat, trunk_out};
  return affine_(g, concat_cols(parts));
}

PredictionHead PredictionHead::warm_start(const PredictionHead& base, int knowledge_width) {
  PredictionHead h;
  h.knowledge_width_ = knowledge_width;
  h.trunk_width_ = base.trunk_width_;
  Mat w = Mat::Zero(knowledge_width + base.trunk_width_, 1);
  w.bottomRows(base.trunk_width_) = base.affine_.weight.value.bottomRows(base.trunk_width_);
  h.affine_.weight = Parameter("head.weight", std::move(w));
  h.affine_.bias = Parameter("head.bias", base.affine_.bias.value);
  return h;
}

Var forward_full(Graph& g, Backbone& backbone, PredictionHead& head, const EmbeddedBatch& e, Var extra) {
  return sigmoid(head.logits(g, backbone.trunk(g, e, extra)));
}

double head_with_knowledge(std::span<const double> trunk_out, std::span<const double> o_flat, PredictionHead& head) {
  Graph g;
  Mat t(1, static_cast<long>(trunk_out.size()));
  std::copy(trunk_out.begin(), trunk_out.end(), t.data());
  Mat o(1, static_cast<long>(o_flat.size()));
  std::copy(o_flat.begin(), o_flat.end(), o.data());
  const Var z = head.logits(g, g.constant(std::move(t)), o_flat.empty() ? Var{} : g.constant(std::move(o)));
  return logistic(z.value()(0, 0));
}

}  // namespace kser
