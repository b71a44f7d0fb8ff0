#include "kser/training.hpp"

#include "kser/error.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <cstring>
#include <numeric>

namespace kser {

TrainingData prepare_training_data(const SplitSets& splits, int field_width, const KnowledgePack* pack,
                                   MissingKeyPolicy policy, const FeatureVocab* vocab, std::size_t min_count) {
  TrainingData d;
  d.vocab = vocab != nullptr ? *vocab : FeatureVocab::build(splits.train, min_count);
  d.schema = d.vocab.schema(field_width);
  d.field_width = field_width;
  const auto fill = [&](const SampleSet& s, SplitData& out) {
    out.encoded = encode(s, d.vocab);
    if (pack != nullptr) out.knowledge = assemble_batch(s, *pack, policy, &out.knowledge_missing);
  };
  fill(splits.train, d.train);
  fill(splits.val, d.val);
  fill(splits.test, d.test);
  if (pack != nullptr) {
    d.dk = pack->dim();
    d.num_fields = static_cast<int>(pack->num_fields());
    std::size_t missing = 0;
    for (const auto* s : {&d.train, &d.val, &d.test})
      missing += static_cast<std::size_t>(std::count(s->knowledge_missing.begin(), s->knowledge_missing.end(), 1));
    if (missing > 0) spdlog::warn("{} samples fell back to zero knowledge for a missing key", missing);
  }
  return d;
}

Batch make_batch(const SplitData& split, std::span<const std::size_t> rows) {
  const auto& e = split.encoded;
  Batch b;
  b.size = rows.size();
  b.n_fields = e.n_fields;
  b.history_length = e.history_length;
  b.fields.reserve(rows.size() * e.n_fields);
  b.history.reserve(rows.size() * e.history_length);
  const bool has_k = split.knowledge.rows() > 0;
  if (has_k) b.knowledge.resize(static_cast<long>(rows.size()), split.knowledge.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t r = rows[i];
    b.fields.insert(b.fields.end(), e.fields.begin() + static_cast<long>(r * e.n_fields),
                    e.fields.begin() + static_cast<long>((r + 1) * e.n_fields));
    b.history.insert(b.history.end(), e.history.begin() + static_cast<long>(r * e.history_length),
                     e.history.begin() + static_cast<long>((r + 1) * e.history_length));
    b.labels.push_back(e.labels[r]);
    if (has_k) b.knowledge.row(static_cast<long>(i)) = split.knowledge.row(static_cast<long>(r));
  }
  return b;
}

// ---- optimizer ------------------------------------------------------------------

Adam::Adam(std::vector<Parameter*> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (Parameter* p : params_) {
    m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    if (!p.trainable) continue;
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p.grad;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

// ---- evaluation -------------------------------------------------------------------

std::vector<double> predict(KserModel& model, const SplitData& split, int batch_size) {
  std::vector<double> scores;
  scores.reserve(split.size());
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < split.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(split.size(), start + static_cast<std::size_t>(batch_size));
    rows.resize(end - start);
    std::iota(rows.begin(), rows.end(), start);
    Graph g;
    const auto f = model.forward(g, make_batch(split, rows));
    for (long i = 0; i < f.logits.rows(); ++i) scores.push_back(logistic(f.logits.value()(i, 0)));
  }
  return scores;
}

Evaluation evaluate(KserModel& model, const SplitData& split) {
  const auto scores = predict(model, split);
  return {compute_auc(scores, split.encoded.labels), compute_logloss(scores, split.encoded.labels)};
}

// ---- training loop ------------------------------------------------------------------

MetricsReport fit(KserModel& model, const TrainingData& data, const TrainConfig& cfg, const StepHook& hook) {
  if (cfg.batch_size < 1) throw ValidationError("train.batch_size must be positive");
  if (cfg.max_epochs < 0) throw ValidationError("train.max_epochs must be non-negative");
  if (!(cfg.lr > 0)) throw ValidationError("train.lr must be positive");
  if (data.train.size() == 0) throw DataError("training split is empty");

  const auto start = std::chrono::steady_clock::now();
  auto params = model.parameters();
  Adam opt(params, cfg.lr);
  Rng shuffle_rng(cfg.seed ^ 0x5DEECE66DULL);

  MetricsReport report;
  report.lr = cfg.lr;
  const auto initial = evaluate(model, data.val);
  report.val_auc = initial.auc;
  report.val_logloss = initial.logloss;
  std::vector<Mat> best;
  for (Parameter* p : params) best.push_back(p->value);

  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);
  int since_best = 0;
  bool out_of_steps = false;
  for (int epoch = 1; epoch <= cfg.max_epochs && !out_of_steps; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t s = 0; s < order.size(); s += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t e = std::min(order.size(), s + static_cast<std::size_t>(cfg.batch_size));
      const Batch batch = make_batch(data.train, std::span(order).subspan(s, e - s));
      opt.zero_grad();
      Graph g;
      const auto f = model.forward(g, batch);
      const Var loss = bce_with_logits(f.logits, batch.labels);
      const double lv = loss.value()(0, 0);
      if (!std::isfinite(lv))
        throw DivergenceError("non-finite training loss at epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(report.steps + 1));
      g.backward(loss);
      opt.step();
      ++report.steps;
      loss_sum += lv * static_cast<double>(batch.size);
      seen += batch.size;
      if (hook) hook(model, report.steps);
      if (cfg.max_steps > 0 && report.steps >= cfg.max_steps) {
        out_of_steps = true;
        break;
      }
    }
    const auto val = evaluate(model, data.val);
    report.history.push_back({epoch, loss_sum / static_cast<double>(std::max<std::size_t>(seen, 1)), val.auc,
                              val.logloss});
    spdlog::info("[{}] epoch {} train_loss {:.5f} val_auc {:.5f} val_logloss {:.5f}", to_string(model.strategy()),
                 epoch, report.history.back().train_loss, val.auc, val.logloss);
    if (val.auc > report.val_auc) {
      report.val_auc = val.auc;
      report.val_logloss = val.logloss;
      report.best_epoch = epoch;
      for (std::size_t i = 0; i < params.size(); ++i) best[i] = params[i]->value;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->trainable) params[i]->value = best[i];
  }

  const auto test = evaluate(model, data.test);
  report.auc = test.auc;
  report.logloss = test.logloss;
  report.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

TrainedModel train_base(const TrainConfig& cfg, const TrainingData& data, const ModelConfig& mcfg,
                        const StepHook& hook) {
  Rng rng(cfg.seed);
  TrainedModel t{KserModel::make_base(mcfg, data.schema, rng), {}};
  t.report = fit(t.model, data, cfg, hook);
  return t;
}

TrainedModel train_all_params(const TrainConfig& cfg, const TrainingData& data, const ModelConfig& mcfg,
                              Ablation ablation, const StepHook& hook) {
  if (data.num_fields == 0) throw ValidationError("all-parameters training needs a knowledge pack");
  Rng rng(cfg.seed);
  TrainedModel t{KserModel::make_all_params(mcfg, data.schema, data.dk, data.num_fields, ablation, rng), {}};
  t.report = fit(t.model, data, cfg, hook);
  return t;
}

TrainedModel train_extractor_only(const TrainConfig& cfg, const TrainingData& data, const ModelConfig& mcfg,
                                  const KserModel& base, Ablation ablation, const StepHook& hook) {
  if (data.num_fields == 0) throw ValidationError("extractor-only training needs a knowledge pack");
  Rng rng(cfg.seed);
  TrainedModel t{KserModel::make_extractor_only(base, mcfg, data.dk, data.num_fields, ablation, rng), {}};
  t.report = fit(t.model, data, cfg, hook);
  return t;
}

double gate_path_embedding_gradient(KserModel& model, const Batch& batch) {
  auto& ext = model.extractor();
  if (!ext || !ext->esfnet()) throw ValidationError("model has no gate unit");
  for (Parameter* p : model.parameters()) p->zero_grad();
  Graph g;
  const auto e = model.embedding().forward(g, batch);
  const auto out = ext->esfnet()->forward(g, g.constant(batch.knowledge), e.flat);
  g.backward(sum_all(out.weights));
  double worst = 0.0;
  for (auto& t : model.embedding().tables()) worst = std::max(worst, t.grad.cwiseAbs().maxCoeff());
  for (Parameter* p : model.parameters()) p->zero_grad();
  return worst;
}

std::uint64_t checksum(const std::vector<Parameter*>& params) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const Parameter* p : params) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p->value.data());
    for (std::size_t i = 0; i < static_cast<std::size_t>(p->value.size()) * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

}  // namespace kser
