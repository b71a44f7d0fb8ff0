#include "fixtures.hpp"

#include "kser/backbones.hpp"
#include "kser/error.hpp"
#include "kser/model.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace kser;
using namespace kser::test;

namespace {

FeatureSchema toy_schema() {
  return FeatureSchema({{"user_id", FieldKind::Categorical, 5, 3},
                        {"item_id", FieldKind::Categorical, 6, 3},
                        {"history", FieldKind::ItemSequence, 6, 3}});
}

Batch toy_batch() {
  Batch b;
  b.size = 3;
  b.n_fields = 2;
  b.history_length = 2;
  b.fields = {2, 3, 4, 5, 3, 2};
  b.history = {2, 3, 0, 0, 4, 0};
  b.labels = {1, 0, 1};
  return b;
}

double relu(double x) { return x > 0 ? x : 0; }

}  // namespace

TEST(Embed, WidthPadAndDeterminism) {
  Rng rng(1);
  EmbeddingLayer layer(toy_schema(), rng);
  EXPECT_EQ(layer.width(), 9);
  const Batch b = toy_batch();
  Graph g;
  const auto e = layer.forward(g, b);
  ASSERT_EQ(e.flat.cols(), 9);
  for (long c = 6; c < 9; ++c) EXPECT_EQ(e.flat.value()(1, c), 0.0);  // all-pad history
  // Pooled history of sample 2 is the single non-pad item's embedding.
  for (long c = 0; c < 3; ++c) EXPECT_EQ(e.flat.value()(2, 6 + c), layer.tables()[1].value(4, c));
  Graph g2;
  EXPECT_EQ(layer.forward(g2, b).flat.value(), e.flat.value());
  EXPECT_TRUE((layer.tables()[0].value.row(0).array() == 0).all());
}

TEST(ForwardFull, ZeroHeadGivesHalf) {
  Rng rng(2);
  EmbeddingLayer layer(toy_schema(), rng);
  for (auto kind : {BackboneKind::Mlp, BackboneKind::DeepFmLite, BackboneKind::DinLite}) {
    Backbone bb({kind, {4}, 4}, layer, 0, rng);
    PredictionHead head(0, bb.trunk_width(), rng);
    head.affine().weight.value.setZero();
    head.affine().bias.value.setZero();
    Graph g;
    const auto y = forward_full(g, bb, head, layer.forward(g, toy_batch()));
    EXPECT_TRUE((y.value().array() == 0.5).all()) << to_string(kind);
  }
}

TEST(ForwardFull, DeepFmZeroEmbeddingsGiveZeroFmTerm) {
  Rng rng(3);
  EmbeddingLayer layer(toy_schema(), rng);
  for (auto& t : layer.tables()) t.value.setZero();
  Backbone bb({BackboneKind::DeepFmLite, {4}, 4}, layer, 0, rng);
  Graph g;
  const Var t = bb.trunk(g, layer.forward(g, toy_batch()));
  EXPECT_TRUE((t.value().col(t.cols() - 1).array() == 0).all());
}

TEST(ForwardFull, DeepFmTermMatchesPairwiseOracle) {
  Rng rng(4);
  EmbeddingLayer layer(toy_schema(), rng);
  Backbone bb({BackboneKind::DeepFmLite, {4}, 4}, layer, 0, rng);
  Graph g;
  const auto e = layer.forward(g, toy_batch());
  const Var t = bb.trunk(g, e);
  for (long b = 0; b < 3; ++b) {
    const Mat v[3] = {e.fields[0].value().row(b), e.fields[1].value().row(b), e.history_mean.value().row(b)};
    double pairs = 0;
    for (int i = 0; i < 3; ++i)
      for (int j = i + 1; j < 3; ++j) pairs += (v[i].array() * v[j].array()).sum();
    EXPECT_NEAR(t.value()(b, t.cols() - 1), pairs, 1e-12);
  }
}

TEST(ForwardFull, TinyMlpMatchesHandForward) {
  Rng rng(5);
  EmbeddingLayer layer(toy_schema(), rng);
  Backbone bb({BackboneKind::Mlp, {2}, 4}, layer, 0, rng);
  PredictionHead head(0, 2, rng);
  const Batch batch = toy_batch();
  Graph g;
  const auto e = layer.forward(g, batch);
  const Var trunk = bb.trunk(g, e);
  const Var y = forward_full(g, bb, head, e);
  const Mat& W = bb.tower()[0].weight.value;
  const Mat& bias = bb.tower()[0].bias.value;
  for (long b = 0; b < 3; ++b) {
    double x[9];
    for (int c = 0; c < 3; ++c) {
      x[c] = layer.tables()[0].value(batch.fields[b * 2], c);
      x[3 + c] = layer.tables()[1].value(batch.fields[b * 2 + 1], c);
      double s = 0;
      int n = 0;
      for (int h = 0; h < 2; ++h) {
        const int tok = batch.history[b * 2 + h];
        if (tok == 0) continue;
        s += layer.tables()[1].value(tok, c);
        ++n;
      }
      x[6 + c] = n ? s / n : 0.0;
    }
    double z = head.affine().bias.value(0, 0);
    for (int k = 0; k < 2; ++k) {
      double a = bias(0, k);
      for (int i = 0; i < 9; ++i) a += x[i] * W(i, k);
      EXPECT_NEAR(trunk.value()(b, k), relu(a), 1e-12);
      z += relu(a) * head.affine().weight.value(k, 0);
    }
    EXPECT_NEAR(y.value()(b, 0), 1.0 / (1.0 + std::exp(-z)), 1e-12);
  }
}

TEST(Trunk, ZeroInputZeroBiasIsZero) {
  Rng rng(6);
  EmbeddingLayer layer(toy_schema(), rng);
  for (auto& t : layer.tables()) t.value.setZero();
  Backbone bb({BackboneKind::Mlp, {4, 3}, 4}, layer, 0, rng);
  Graph g;
  EXPECT_TRUE((bb.trunk(g, layer.forward(g, toy_batch())).value().array() == 0).all());
}

TEST(Head, ZeroInitAndZeroKnowledgeSlice) {
  Rng rng(7);
  PredictionHead zero(3, 2, rng);
  zero.affine().weight.value.setZero();
  zero.affine().bias.value.setZero();
  EXPECT_EQ(head_with_knowledge(std::vector<double>{1, 2}, std::vector<double>{3, 4, 5}, zero), 0.5);

  PredictionHead base(0, 2, rng);
  PredictionHead wide = PredictionHead::warm_start(base, 3);
  const std::vector<double> t = {0.3, -1.2};
  EXPECT_DOUBLE_EQ(head_with_knowledge(t, std::vector<double>{0, 0, 0}, wide), head_with_knowledge(t, {}, base));
  const double z = 0.3 * base.affine().weight.value(0, 0) - 1.2 * base.affine().weight.value(1, 0) +
                   base.affine().bias.value(0, 0);
  EXPECT_NEAR(head_with_knowledge(t, {}, base), 1.0 / (1.0 + std::exp(-z)), 1e-15);

  wide.affine().weight.value(0, 0) = 0.5;
  const double z2 = z + 0.5 * 2.0;
  EXPECT_NEAR(head_with_knowledge(t, std::vector<double>{2, 0, 0}, wide), 1.0 / (1.0 + std::exp(-z2)), 1e-15);
  EXPECT_THROW(head_with_knowledge(t, std::vector<double>{1}, wide), DataError);
}

TEST(Decomposition, ModelEqualsHeadTrunkEmbedBitwise) {
  const TrainingData data = make_data(tiny_spec(), 2, 4);
  const Batch batch = first_rows(data.train, 40);
  for (auto kind : {BackboneKind::Mlp, BackboneKind::DeepFmLite, BackboneKind::DinLite}) {
    Rng rng(8);
    KserModel m = KserModel::make_base(tiny_model(kind), data.schema, rng);
    Graph g;
    const Mat logits = m.forward(g, batch).logits.value();
    Graph g2;
    const auto e = m.embedding().forward(g2, batch);
    const Mat y = forward_full(g2, m.backbone(), m.head(), e).value();
    for (long b = 0; b < y.rows(); ++b) {
      EXPECT_EQ(y(b, 0), logistic(logits(b, 0))) << to_string(kind);
      EXPECT_GT(y(b, 0), 0.0);
      EXPECT_LT(y(b, 0), 1.0);
    }
  }
}

TEST(DinLite, AttentionSumsToOneOverNonPad) {
  Rng rng(9);
  EmbeddingLayer layer(toy_schema(), rng);
  Backbone bb({BackboneKind::DinLite, {4}, 4}, layer, 0, rng);
  const Batch batch = toy_batch();
  Graph g;
  const auto e = layer.forward(g, batch);
  const Mat p = bb.din_attention(g, e).value();
  EXPECT_NEAR(p.row(0).sum(), 1.0, 1e-12);
  EXPECT_EQ(p.row(1).sum(), 0.0);  // no history at all
  EXPECT_EQ(p(2, 0), 1.0);
  EXPECT_EQ(p(2, 1), 0.0);
}

TEST(ExtractorOnly, ZeroStepsReproduceBase) {
  const TrainingData data = make_data(tiny_spec(), 3, 4);
  const Batch batch = first_rows(data.train, 40);
  Rng rng(10);
  KserModel base = KserModel::make_base(tiny_model(), data.schema, rng);
  KserModel eo = KserModel::make_extractor_only(base, tiny_model(), data.dk, data.num_fields, Ablation::None, rng);
  Graph g1, g2;
  const Mat a = base.forward(g1, batch).logits.value();
  const Mat b = eo.forward(g2, batch).logits.value();
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(BackboneGradient, FiniteDifferencesAgreeForEveryKind) {
  const TrainingData data = make_data(tiny_spec(), 4, 4);
  const Batch batch = first_rows(data.train, 16);
  for (auto kind : {BackboneKind::Mlp, BackboneKind::DeepFmLite, BackboneKind::DinLite}) {
    for (Strategy s : {Strategy::Base, Strategy::AllParams}) {
      Rng rng(11);
      KserModel m = s == Strategy::Base
                        ? KserModel::make_base(tiny_model(kind), data.schema, rng)
                        : KserModel::make_all_params(tiny_model(kind), data.schema, data.dk, data.num_fields,
                                                     Ablation::None, rng);
      // With a gate, finite differences on the tables also see the detached
      // gate path, which the analytic gradient leaves out by design.
      std::vector<Parameter*> params = m.parameters();
      if (s != Strategy::Base) {
        std::erase_if(params, [&](Parameter* p) {
          for (auto& t : m.embedding().tables())
            if (p == &t) return true;
          return false;
        });
      }
      const double err = gradient_error(params, [&](Graph& g) {
        return bce_with_logits(m.forward(g, batch).logits, batch.labels);
      }, 12);
      EXPECT_LT(err, 1e-4) << to_string(kind) << " " << to_string(s);
    }
  }
}
