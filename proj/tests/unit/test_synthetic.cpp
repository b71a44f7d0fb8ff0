#include "fixtures.hpp"

#include "kser/error.hpp"
#include "kser/metrics.hpp"
#include "kser/synthetic.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

using namespace kser;
using namespace kser::test;

namespace {

/// Logistic probe on one knowledge field, trained by full-batch gradient
/// descent on samples [0, n_fit) and scored on [n_fit, end).
double probe_auc(const SyntheticDataset& d, std::size_t field, std::size_t n_fit) {
  const KnowledgeField& f = d.pack.fields()[field];
  const int dim = f.dim();
  auto features = [&](const Sample& x) {
    const std::string& key = f.keyed_by() == KeyedBy::UserId ? x.user_id : x.item_id;
    const float* v = f.find(key);
    std::vector<double> out(v, v + dim);
    out.push_back(1.0);
    return out;
  };
  std::vector<double> w(static_cast<std::size_t>(dim) + 1, 0.0);
  for (int it = 0; it < 300; ++it) {
    std::vector<double> g(w.size(), 0.0);
    for (std::size_t i = 0; i < n_fit; ++i) {
      const auto x = features(d.samples.samples[i]);
      double z = 0;
      for (std::size_t k = 0; k < w.size(); ++k) z += w[k] * x[k];
      const double r = 1.0 / (1.0 + std::exp(-z)) - d.samples.samples[i].label;
      for (std::size_t k = 0; k < w.size(); ++k) g[k] += r * x[k];
    }
    for (std::size_t k = 0; k < w.size(); ++k) w[k] -= 0.5 * g[k] / static_cast<double>(n_fit);
  }
  std::vector<double> s, y;
  for (std::size_t i = n_fit; i < d.samples.size(); ++i) {
    const auto x = features(d.samples.samples[i]);
    double z = 0;
    for (std::size_t k = 0; k < w.size(); ++k) z += w[k] * x[k];
    s.push_back(z);
    y.push_back(d.samples.samples[i].label);
  }
  return compute_auc(s, y);
}

std::vector<char> bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Synthetic, SameSeedSameBytes) {
  const SyntheticSpec spec = tiny_spec();
  const SyntheticDataset a = gen_synthetic_dataset(spec, 42);
  const SyntheticDataset b = gen_synthetic_dataset(spec, 42);
  EXPECT_TRUE(a.pack == b.pack);
  ASSERT_EQ(a.samples.size(), b.samples.size());
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    EXPECT_EQ(a.samples.samples[i].item_id, b.samples.samples[i].item_id);
    EXPECT_EQ(a.samples.samples[i].label, b.samples.samples[i].label);
    EXPECT_EQ(a.samples.samples[i].context, b.samples.samples[i].context);
  }
  TempDir da("synth"), db("synth");
  write_synthetic(a, spec, 42, da.path());
  write_synthetic(b, spec, 42, db.path());
  for (const auto& e : std::filesystem::recursive_directory_iterator(da.path())) {
    if (!e.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(e.path(), da.path());
    EXPECT_EQ(bytes(e.path()), bytes(db.path() / rel)) << rel;
  }
  EXPECT_FALSE(gen_synthetic_dataset(spec, 43).pack == a.pack);
}

TEST(Synthetic, InfiniteSnrProbeOnSignalFieldSeparates) {
  SyntheticSpec spec = tiny_spec();
  spec.n_samples = 5000;
  spec.n_items = 500;
  spec.dk = 16;
  spec.chunks = 4;
  spec.snr = std::numeric_limits<double>::infinity();
  spec.sign_coded = false;
  spec.muted_channels = 0;
  const SyntheticDataset d = gen_synthetic_dataset(spec, 1);
  EXPECT_GE(probe_auc(d, 0, 4000), 0.95);
  EXPECT_GE(d.oracle.bayes_auc, 0.99);
}

TEST(Synthetic, ZeroSignalProbesStayAtChance) {
  SyntheticSpec spec = tiny_spec();
  spec.n_samples = 20000;
  spec.n_items = 2000;
  spec.dk = 16;
  spec.snr = 0.0;
  spec.user_signal = 0.0;
  const SyntheticDataset d = gen_synthetic_dataset(spec, 2);
  for (std::size_t f = 0; f < d.pack.num_fields(); ++f) {
    const double auc = probe_auc(d, f, 10000);
    EXPECT_NEAR(auc, 0.5, 0.02) << d.pack.fields()[f].name();
  }
}

TEST(Synthetic, OracleMarginAndNoiseField) {
  const SyntheticDataset d = gen_synthetic_dataset(tiny_spec(), 3);
  EXPECT_GT(d.oracle.bayes_auc, d.oracle.categorical_auc + 0.1);
  EXPECT_EQ(d.pack.fields()[0].keyed_by(), KeyedBy::ItemId);
  SyntheticSpec greedy = tiny_spec();
  greedy.min_margin = 0.9;
  EXPECT_THROW(gen_synthetic_dataset(greedy, 3), ValidationError);
}

TEST(Synthetic, InconsistentSpecRejected) {
  SyntheticSpec s = tiny_spec();
  s.dk = 7;
  EXPECT_THROW(gen_synthetic_dataset(s, 1), ValidationError);
  s = tiny_spec();
  s.signal_field = 2;
  EXPECT_THROW(gen_synthetic_dataset(s, 1), ValidationError);
  EXPECT_THROW(SyntheticSpec::from_json({{"bogus", 1}}), ValidationError);
}

TEST(Synthetic, JsonRoundTripKeepsInfinity) {
  SyntheticSpec s = tiny_spec();
  s.snr = std::numeric_limits<double>::infinity();
  const SyntheticSpec t = SyntheticSpec::from_json(s.to_json());
  EXPECT_TRUE(std::isinf(t.snr));
  EXPECT_EQ(t.n_items, s.n_items);
}
