#include "kser/metrics.hpp"

#include "kser/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace kser {

double compute_auc(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size()) throw ValidationError("auc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sum of midranks of the positives (Mann-Whitney U).
  double rank_sum = 0.0;
  double positives = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] > 0.5) {
        rank_sum += midrank;
        positives += 1.0;
      }
    }
    i = j;
  }
  const double negatives = static_cast<double>(n) - positives;
  if (positives == 0.0 || negatives == 0.0)
    throw ValidationError("auc is undefined without both positive and negative labels");
  return (rank_sum - positives * (positives + 1.0) / 2.0) / (positives * negatives);
}

double compute_logloss(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size()) throw ValidationError("logloss: scores and labels differ in length");
  if (scores.empty()) throw ValidationError("logloss of an empty set");
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double p = std::clamp(scores[i], kLogLossEpsilon, 1.0 - kLogLossEpsilon);
    total -= labels[i] * std::log(p) + (1.0 - labels[i]) * std::log(1.0 - p);
  }
  return total / static_cast<double>(scores.size());
}

Improvement improvement(double auc_a, double logloss_a, double auc_b, double logloss_b) {
  if (auc_b == 0.0 || logloss_a == 0.0) throw ValidationError("improvement: zero denominator");
  return {(auc_b - auc_a) / auc_b, (logloss_a - logloss_b) / logloss_a};
}

}  // namespace kser
