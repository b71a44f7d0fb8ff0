#pragma once

// Planted-signal interaction logs with a matching knowledge pack.
//
// Every item has a latent quality q_i ~ N(0, 1) and every user a bias
// c_u ~ N(0, user_signal^2). The label logit is
//
//     intercept + c_u + snr * q_i * r(channel)
//
// where r is 0 on the first `muted_channels` values of the "channel" context
// field and 1 elsewhere. Knowledge field `signal_field` (keyed by item) stores
// q_i in its first chunk; every other chunk and every other field is
// label-independent Gaussian noise. With `sign_coded`, chunk 0 holds
// sign_i * q_i and chunk 1 holds sign_i, so q_i is only recoverable from the
// product of the two chunks.

#include "kser/data.hpp"
#include "kser/knowledge.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <limits>

namespace kser {

struct SyntheticSpec {
  std::size_t n_samples = 50000;
  int n_users = 1000;
  int n_items = 200000;
  int n_channels = 4;
  int muted_channels = 1;
  int num_fields = 2;  // L
  int dk = 16;
  int chunks = 4;      // planting granularity; chunk size is dk / chunks
  int signal_field = 0;
  /// Logit scale of the knowledge signal. +inf makes labels deterministic
  /// (1 iff q_i > 0 on unmuted channels); 0 removes the signal.
  double snr = 3.0;
  double user_signal = 0.5;
  double intercept = 0.0;
  double knowledge_noise = 0.1;  // added to the planted chunk(s)
  double noise_scale = 1.0;      // std of the label-independent chunks and fields
  bool sign_coded = true;
  /// Generation fails unless Bayes AUC - categorical AUC >= min_margin.
  double min_margin = 0.0;

  void validate() const;
  static SyntheticSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct SyntheticOracle {
  /// AUC of the true label probability.
  double bayes_auc = 0.5;
  /// AUC of the best score computable from user and channel alone (probit
  /// approximation to the marginal over q_i).
  double categorical_auc = 0.5;
  double positive_rate = 0.0;
};

struct SyntheticDataset {
  SampleSet samples;  // context field "channel"; no history yet
  KnowledgePack pack;
  SyntheticOracle oracle;
};

SyntheticDataset gen_synthetic_dataset(const SyntheticSpec& spec, std::uint64_t seed);

/// Writes `interactions.tsv` (ratings 5/1 so movielens binarization recovers
/// the labels), the pack under `knowledge/` and `oracle.json`.
void write_synthetic(const SyntheticDataset& d, const SyntheticSpec& spec, std::uint64_t seed,
                     const std::filesystem::path& dir);

}  // namespace kser
