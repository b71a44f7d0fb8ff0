#pragma once

#include "kser/autograd.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace kser {

enum class DatasetKind { MovieLens, AmazonBook };

DatasetKind parse_dataset_kind(const std::string& s);
std::string to_string(DatasetKind k);

/// 1 iff rating > 4 (MovieLens); 0 iff rating < 5 (Amazon-Book). Ratings
/// outside [1, 5] are rejected with ValidationError.
int binarize_rating(double rating, DatasetKind kind);

enum class FieldKind { Categorical, ItemSequence };

struct FieldSpec {
  std::string name;
  FieldKind kind = FieldKind::Categorical;
  int vocab_size = 1;
  int width = 1;
};

/// Feature fields of the recommender side. The item-sequence field (at most
/// one) holds item tokens and, after pooling, contributes its width once.
class FeatureSchema {
 public:
  FeatureSchema() = default;
  explicit FeatureSchema(std::vector<FieldSpec> fields);

  const std::vector<FieldSpec>& fields() const { return fields_; }
  /// Total feature-embedding width d_e.
  int embedding_width() const;
  std::optional<std::size_t> sequence_field() const;
  std::optional<std::size_t> find(const std::string& name) const;

 private:
  std::vector<FieldSpec> fields_;
};

/// Reserved history pad token.
inline const std::string kPadToken = "<pad>";

struct Sample {
  std::string sample_id;
  std::string user_id;
  std::string item_id;
  /// Fixed length H_max after build_history, right-padded with kPadToken,
  /// oldest first.
  std::vector<std::string> history;
  /// Extra categorical fields in the order of SampleSet::context_fields.
  std::vector<std::string> context;
  int label = 0;
  std::int64_t timestamp = 0;
};

enum class SplitTag { All, Train, Val, Test };

std::string to_string(SplitTag t);

struct SampleSet {
  std::vector<std::string> context_fields;
  std::vector<Sample> samples;
  SplitTag split = SplitTag::All;
  std::size_t history_length = 0;

  std::size_t size() const { return samples.size(); }
};

/// Reads the interaction TSV (header `user_id item_id rating timestamp [extras...]`).
/// Per-user chronological order is preserved (rows are kept in file order; the
/// split and history steps sort by timestamp stably).
SampleSet load_interactions(const std::filesystem::path& path, DatasetKind kind);

struct SplitRatios {
  double train = 0.8, val = 0.1, test = 0.1;
};

struct SplitSets {
  SampleSet train, val, test;
};

/// Global timestamp-ordered split, stable on ties. Val and test take
/// floor(n * ratio) samples (at least one each), train takes the remainder.
SplitSets chronological_split(const SampleSet& set, SplitRatios ratios);

/// Each sample's history becomes that user's most recent <= h_max positive
/// items strictly before its timestamp, padded to h_max.
SampleSet build_history(const SampleSet& set, std::size_t h_max);

// ---- vocabulary and encoding ---------------------------------------------------

/// Token -> index map frozen on the training split. Index 0 is the pad token,
/// index 1 the out-of-vocabulary bucket.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kOov = 1;

  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens);

  int lookup(const std::string& token) const;
  int size() const { return static_cast<int>(tokens_.size()) + 2; }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

/// Categorical vocabularies (user, item, context fields, in that order) built
/// from a training split. History tokens are looked up in the item vocabulary.
struct FeatureVocab {
  std::vector<std::string> names;
  std::vector<Vocabulary> vocabs;
  std::size_t history_length = 0;

  /// Tokens seen fewer than `min_count` times in `train` map to the OOV index.
  static FeatureVocab build(const SampleSet& train, std::size_t min_count = 1);
  /// Schema with every categorical field at `width`; the history field shares
  /// the item field's table and width.
  FeatureSchema schema(int width) const;
  std::size_t item_field() const { return 1; }
  /// Stable 64-bit fingerprint of field names, widths and vocabularies.
  std::uint64_t hash(int width) const;
};

/// Dense integer encoding of a SampleSet.
struct EncodedSet {
  std::size_t n = 0;
  std::size_t n_fields = 0;       // categorical fields per sample
  std::size_t history_length = 0;
  std::vector<int> fields;        // n x n_fields
  std::vector<int> history;       // n x history_length, pad = 0
  std::vector<double> labels;
  std::vector<std::string> sample_ids;
};

EncodedSet encode(const SampleSet& set, const FeatureVocab& vocab);

}  // namespace kser
