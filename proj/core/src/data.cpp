#include "kser/data.hpp"

#include "kser/error.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace kser {

DatasetKind parse_dataset_kind(const std::string& s) {
  if (s == "movielens") return DatasetKind::MovieLens;
  if (s == "amazon_book") return DatasetKind::AmazonBook;
  throw ValidationError("unknown dataset kind '" + s + "' (expected movielens or amazon_book)");
}

std::string to_string(DatasetKind k) {
  return k == DatasetKind::MovieLens ? "movielens" : "amazon_book";
}

std::string to_string(SplitTag t) {
  switch (t) {
    case SplitTag::Train: return "train";
    case SplitTag::Val: return "val";
    case SplitTag::Test: return "test";
    default: return "all";
  }
}

int binarize_rating(double rating, DatasetKind kind) {
  if (!std::isfinite(rating) || rating < 1.0 || rating > 5.0) {
    std::ostringstream os;
    os << "rating " << rating << " outside the [1, 5] scale";
    throw ValidationError(os.str());
  }
  if (kind == DatasetKind::MovieLens) return rating > 4.0 ? 1 : 0;
  return rating < 5.0 ? 0 : 1;
}

FeatureSchema::FeatureSchema(std::vector<FieldSpec> fields) : fields_(std::move(fields)) {
  std::unordered_set<std::string> names;
  int sequences = 0;
  for (const auto& f : fields_) {
    if (!names.insert(f.name).second) throw ValidationError("duplicate field name '" + f.name + "'");
    if (f.vocab_size < 1) throw ValidationError("field '" + f.name + "' has empty vocabulary");
    if (f.width < 1) throw ValidationError("field '" + f.name + "' has non-positive width");
    if (f.kind == FieldKind::ItemSequence) ++sequences;
  }
  if (sequences > 1) throw ValidationError("at most one item-sequence field is allowed");
}

int FeatureSchema::embedding_width() const {
  int total = 0;
  for (const auto& f : fields_) total += f.width;
  return total;
}

std::optional<std::size_t> FeatureSchema::sequence_field() const {
  for (std::size_t i = 0; i < fields_.size(); ++i)
    if (fields_[i].kind == FieldKind::ItemSequence) return i;
  return std::nullopt;
}

std::optional<std::size_t> FeatureSchema::find(const std::string& name) const {
  for (std::size_t i = 0; i < fields_.size(); ++i)
    if (fields_[i].name == name) return i;
  return std::nullopt;
}

// ---- ingestion ----------------------------------------------------------------

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

template <typename T>
bool parse_number(const std::string& s, T& out) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

}  // namespace

SampleSet load_interactions(const std::filesystem::path& path, DatasetKind kind) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open interactions file " + path.string());

  SampleSet set;
  std::string line;
  if (!std::getline(in, line)) {
    spdlog::warn("{} is empty; no samples loaded", path.string());
    return set;
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_tabs(line);
  const std::vector<std::string> required = {"user_id", "item_id", "rating", "timestamp"};
  if (header.size() < required.size() || !std::equal(required.begin(), required.end(), header.begin()))
    throw DataError(path.string() + ":1: header must start with user_id, item_id, rating, timestamp");
  set.context_fields.assign(header.begin() + 4, header.end());

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cols = split_tabs(line);
    const auto where = [&] { return path.string() + ":" + std::to_string(line_no) + ": "; };
    if (cols.size() != header.size())
      throw DataError(where() + "expected " + std::to_string(header.size()) + " columns, found " +
                      std::to_string(cols.size()));
    double rating = 0;
    std::int64_t ts = 0;
    if (!parse_number(cols[2], rating)) throw DataError(where() + "rating '" + cols[2] + "' is not numeric");
    if (!parse_number(cols[3], ts)) throw DataError(where() + "timestamp '" + cols[3] + "' is not an integer");
    if (cols[0].empty() || cols[1].empty()) throw DataError(where() + "empty user or item id");

    Sample s;
    s.sample_id = std::to_string(set.samples.size());
    s.user_id = cols[0];
    s.item_id = cols[1];
    try {
      s.label = binarize_rating(rating, kind);
    } catch (const ValidationError& e) {
      throw DataError(where() + e.what());
    }
    s.timestamp = ts;
    s.context.assign(cols.begin() + 4, cols.end());
    set.samples.push_back(std::move(s));
  }
  if (set.samples.empty()) spdlog::warn("{} holds no interactions", path.string());
  return set;
}

// ---- split and history ----------------------------------------------------------

namespace {

std::vector<std::size_t> time_order(const SampleSet& set) {
  std::vector<std::size_t> order(set.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return set.samples[a].timestamp < set.samples[b].timestamp;
  });
  return order;
}

}  // namespace

SplitSets chronological_split(const SampleSet& set, SplitRatios r) {
  if (!(r.train > 0 && r.val > 0 && r.test > 0))
    throw ValidationError("split ratios must all be positive");
  if (std::abs(r.train + r.val + r.test - 1.0) > 1e-9)
    throw ValidationError("split ratios must sum to 1");
  const std::size_t n = set.size();
  if (n < 3) throw ValidationError("chronological split needs at least 3 samples, got " + std::to_string(n));

  const auto take = [n](double ratio) {
    const auto k = static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratio + 1e-9));
    return std::max<std::size_t>(k, 1);
  };
  const std::size_t n_val = take(r.val), n_test = take(r.test);
  if (n_val + n_test >= n) throw ValidationError("split leaves no training samples");
  const std::size_t n_train = n - n_val - n_test;

  const auto order = time_order(set);
  SplitSets out;
  for (auto* s : {&out.train, &out.val, &out.test}) {
    s->context_fields = set.context_fields;
    s->history_length = set.history_length;
  }
  out.train.split = SplitTag::Train;
  out.val.split = SplitTag::Val;
  out.test.split = SplitTag::Test;
  for (std::size_t i = 0; i < n; ++i) {
    SampleSet& dst = i < n_train ? out.train : (i < n_train + n_val ? out.val : out.test);
    dst.samples.push_back(set.samples[order[i]]);
  }
  return out;
}

SampleSet build_history(const SampleSet& set, std::size_t h_max) {
  if (h_max == 0) throw ValidationError("history length must be positive");
  SampleSet out = set;
  out.history_length = h_max;

  std::unordered_map<std::string, std::vector<std::size_t>> by_user;
  for (const std::size_t i : time_order(set)) by_user[set.samples[i].user_id].push_back(i);

  for (auto& [user, idx] : by_user) {
    std::vector<std::string> positives;
    std::size_t g = 0;
    while (g < idx.size()) {
      // Samples sharing a timestamp see only strictly earlier positives.
      std::size_t end = g;
      const auto ts = set.samples[idx[g]].timestamp;
      while (end < idx.size() && set.samples[idx[end]].timestamp == ts) ++end;
      const std::size_t take = std::min(h_max, positives.size());
      std::vector<std::string> hist(positives.end() - static_cast<long>(take), positives.end());
      hist.resize(h_max, kPadToken);
      for (std::size_t k = g; k < end; ++k) out.samples[idx[k]].history = hist;
      for (std::size_t k = g; k < end; ++k)
        if (set.samples[idx[k]].label == 1) positives.push_back(set.samples[idx[k]].item_id);
      g = end;
    }
  }
  return out;
}

// ---- vocabulary -----------------------------------------------------------------

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<int>(i) + 2).second)
      throw ValidationError("duplicate vocabulary token '" + tokens_[i] + "'");
  }
}

int Vocabulary::lookup(const std::string& token) const {
  if (token == kPadToken) return kPad;
  const auto it = index_.find(token);
  return it == index_.end() ? kOov : it->second;
}

FeatureVocab FeatureVocab::build(const SampleSet& train, std::size_t min_count) {
  FeatureVocab fv;
  fv.names = {"user_id", "item_id"};
  fv.names.insert(fv.names.end(), train.context_fields.begin(), train.context_fields.end());
  fv.history_length = train.history_length;

  // Occurrences as a sample's own feature value; history positions only
  // reuse item tokens that already qualify.
  const std::size_t nf = fv.names.size();
  std::vector<std::unordered_map<std::string, std::size_t>> counts(nf);
  for (const auto& s : train.samples) {
    ++counts[0][s.user_id];
    ++counts[1][s.item_id];
    for (std::size_t c = 0; c < s.context.size() && 2 + c < nf; ++c) ++counts[2 + c][s.context[c]];
  }
  for (std::size_t f = 0; f < nf; ++f) {
    std::vector<std::string> tokens;
    for (const auto& [t, n] : counts[f])
      if (n >= std::max<std::size_t>(min_count, 1) && t != kPadToken) tokens.push_back(t);
    std::sort(tokens.begin(), tokens.end());
    fv.vocabs.emplace_back(std::move(tokens));
  }
  return fv;
}

FeatureSchema FeatureVocab::schema(int width) const {
  std::vector<FieldSpec> fields;
  for (std::size_t i = 0; i < names.size(); ++i)
    fields.push_back({names[i], FieldKind::Categorical, vocabs[i].size(), width});
  if (history_length > 0)
    fields.push_back({"history", FieldKind::ItemSequence, vocabs[item_field()].size(), width});
  return FeatureSchema(std::move(fields));
}

std::uint64_t FeatureVocab::hash(int width) const {
  std::uint64_t h = 1469598103934665603ULL;
  const auto mix = [&h](std::string_view s) {
    for (const unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    h ^= 0xff;
    h *= 1099511628211ULL;
  };
  mix(std::to_string(width));
  mix(std::to_string(history_length));
  for (std::size_t i = 0; i < names.size(); ++i) {
    mix(names[i]);
    for (const auto& t : vocabs[i].tokens()) mix(t);
  }
  return h;
}

EncodedSet encode(const SampleSet& set, const FeatureVocab& vocab) {
  EncodedSet e;
  e.n = set.size();
  e.n_fields = vocab.names.size();
  e.history_length = vocab.history_length;
  if (set.context_fields.size() + 2 != e.n_fields)
    throw DataError("sample set context fields do not match the vocabulary");
  e.fields.reserve(e.n * e.n_fields);
  e.history.reserve(e.n * e.history_length);
  for (const auto& s : set.samples) {
    e.fields.push_back(vocab.vocabs[0].lookup(s.user_id));
    e.fields.push_back(vocab.vocabs[1].lookup(s.item_id));
    for (std::size_t c = 0; c < s.context.size(); ++c) e.fields.push_back(vocab.vocabs[2 + c].lookup(s.context[c]));
    for (std::size_t h = 0; h < e.history_length; ++h) {
      const std::string& tok = h < s.history.size() ? s.history[h] : kPadToken;
      e.history.push_back(vocab.vocabs[vocab.item_field()].lookup(tok));
    }
    e.labels.push_back(static_cast<double>(s.label));
    e.sample_ids.push_back(s.sample_id);
  }
  return e;
}

}  // namespace kser
