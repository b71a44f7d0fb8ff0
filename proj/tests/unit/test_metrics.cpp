#include "fixtures.hpp"

#include "kser/error.hpp"
#include "kser/metrics.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace kser;

namespace {

double pair_count_auc(const std::vector<double>& s, const std::vector<double>& y) {
  double wins = 0, pos = 0, neg = 0;
  for (std::size_t i = 0; i < s.size(); ++i) (y[i] > 0.5 ? pos : neg) += 1;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] < 0.5) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] > 0.5) continue;
      wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    }
  }
  return wins / (pos * neg);
}

/// Random instance with both classes and (when `coarse`) many ties.
void random_instance(Rng& rng, std::size_t n, bool coarse, std::vector<double>& s, std::vector<double>& y) {
  s.resize(n);
  y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = coarse ? std::floor(rng.uniform() * 5) / 5 : rng.uniform();
    y[i] = rng.below(2) ? 1.0 : 0.0;
  }
  y[0] = 1.0;
  y[1] = 0.0;
}

}  // namespace

TEST(Auc, PerfectAndTied) {
  EXPECT_EQ(compute_auc(std::vector<double>{0.9, 0.1}, std::vector<double>{1, 0}), 1.0);
  EXPECT_EQ(compute_auc(std::vector<double>{0.3, 0.3, 0.3, 0.3}, std::vector<double>{1, 0, 1, 0}), 0.5);
  EXPECT_THROW(compute_auc(std::vector<double>{0.1, 0.2}, std::vector<double>{1, 1}), ValidationError);
}

TEST(Auc, EqualsPairCountingExactly) {
  Rng rng(1);
  std::vector<double> s, y;
  for (int t = 0; t < 200; ++t) {
    random_instance(rng, t < 100 ? 50 : 2 + rng.below(1000), t % 2 == 0, s, y);
    ASSERT_EQ(compute_auc(s, y), pair_count_auc(s, y)) << t;
  }
}

TEST(LogLoss, AnalyticCases) {
  const std::vector<double> y = {1, 0, 1, 0};
  EXPECT_NEAR(compute_logloss(std::vector<double>(4, 0.5), y), std::log(2.0), 1e-15);
  const double exact = compute_logloss(y, y);
  EXPECT_GT(exact, 0.0);
  EXPECT_LT(exact, 2e-7);
  EXPECT_TRUE(std::isfinite(compute_logloss(std::vector<double>{0, 1}, std::vector<double>{1, 0})));
  EXPECT_THROW(compute_logloss(std::vector<double>{0.5}, std::vector<double>{1, 0}), ValidationError);
}

TEST(LogLoss, MatchesDirectSummation) {
  Rng rng(2);
  std::vector<double> s, y;
  for (int t = 0; t < 100; ++t) {
    random_instance(rng, 1 + rng.below(300), false, s, y);
    double total = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double p = std::min(std::max(s[i], 1e-7), 1 - 1e-7);
      total += y[i] > 0.5 ? -std::log(p) : -std::log(1 - p);
    }
    ASSERT_NEAR(compute_logloss(s, y), total / static_cast<double>(s.size()), 1e-9);
  }
}

TEST(Improvement, PublishedLogLossRow) {
  const Improvement imp = improvement(0.77269, 0.56072, 0.78449, 0.55554);
  EXPECT_NEAR(imp.logloss * 100, 0.9238, 5e-5);
  EXPECT_NEAR(imp.auc, (0.78449 - 0.77269) / 0.78449, 1e-15);
  const Improvement same = improvement(0.7, 0.5, 0.7, 0.5);
  EXPECT_EQ(same.auc, 0.0);
  EXPECT_EQ(same.logloss, 0.0);
  EXPECT_THROW(improvement(0.7, 0.0, 0.7, 0.5), ValidationError);
}
