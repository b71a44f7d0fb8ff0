#pragma once

#include <span>

namespace kser {

/// Rank-based ROC AUC; tied scores contribute 1/2 per pair. Throws
/// ValidationError unless both classes are present.
double compute_auc(std::span<const double> scores, std::span<const double> labels);

inline constexpr double kLogLossEpsilon = 1e-7;

/// Mean binary cross-entropy with probabilities clamped to [eps, 1 - eps].
double compute_logloss(std::span<const double> scores, std::span<const double> labels);

struct Improvement {
  double auc = 0.0;
  double logloss = 0.0;
};

/// Relative change from reference (a) to candidate (b):
///   auc     = (AUC_b - AUC_a) / AUC_b
///   logloss = (LL_a - LL_b) / LL_a
/// The denominators differ on purpose; this is the form reported in the
/// published tables.
Improvement improvement(double auc_a, double logloss_a, double auc_b, double logloss_b);

}  // namespace kser
