#pragma once

#include "kser/autograd.hpp"
#include "kser/data.hpp"

#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

namespace kser {

enum class KeyedBy { UserId, ItemId, SampleId };

KeyedBy parse_keyed_by(const std::string& s);
std::string to_string(KeyedBy k);

/// One knowledge field of the repository: `count` vectors of width `dim`,
/// addressed by the tokens in `keys` (row order).
class KnowledgeField {
 public:
  KnowledgeField() = default;
  KnowledgeField(std::string name, KeyedBy keyed_by, int dim, std::vector<std::string> keys,
                 std::vector<float> values);

  const std::string& name() const { return name_; }
  KeyedBy keyed_by() const { return keyed_by_; }
  int dim() const { return dim_; }
  std::size_t count() const { return keys_.size(); }
  const std::vector<std::string>& keys() const { return keys_; }
  const std::vector<float>& values() const { return values_; }

  /// Row for `key`, or nullptr when absent.
  const float* find(const std::string& key) const;

 private:
  std::string name_;
  KeyedBy keyed_by_ = KeyedBy::ItemId;
  int dim_ = 0;
  std::vector<std::string> keys_;
  std::vector<float> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// The knowledge repository K: L fields sharing one width d_k. Immutable once
/// constructed; the constructor enforces the invariants.
class KnowledgePack {
 public:
  KnowledgePack() = default;
  explicit KnowledgePack(std::vector<KnowledgeField> fields);

  const std::vector<KnowledgeField>& fields() const { return fields_; }
  std::size_t num_fields() const { return fields_.size(); }
  int dim() const { return fields_.empty() ? 0 : fields_.front().dim(); }

  friend bool operator==(const KnowledgePack& a, const KnowledgePack& b);

 private:
  std::vector<KnowledgeField> fields_;
};

/// Reads a pack directory: manifest.json plus <name>.keys / <name>.f32 per field.
KnowledgePack load_pack(const std::filesystem::path& dir);

/// Writes the pack layout read by load_pack; the round trip is byte-exact.
void write_pack(const KnowledgePack& pack, const std::filesystem::path& dir);

/// Per-sample knowledge k_i: d_k x L, stored column-major so that data() is
/// the column-wise flattening vec(k_i).
struct KnowledgeMatrix {
  int dk = 0;
  int num_fields = 0;
  std::vector<float> data;

  KnowledgeMatrix() = default;
  KnowledgeMatrix(int d, int l) : dk(d), num_fields(l), data(static_cast<std::size_t>(d) * l, 0.0f) {}

  float& at(int row, int field) { return data[static_cast<std::size_t>(field) * dk + row]; }
  float at(int row, int field) const { return data[static_cast<std::size_t>(field) * dk + row]; }
};

enum class MissingKeyPolicy { ZeroFill, Strict };

MissingKeyPolicy parse_missing_policy(const std::string& s);

struct AssembledKnowledge {
  KnowledgeMatrix matrix;
  /// True when at least one column fell back to zeros.
  bool missing = false;
};

/// Column j is field j's vector for the sample's join key (manifest order).
AssembledKnowledge assemble_knowledge(const Sample& sample, const KnowledgePack& pack,
                                      MissingKeyPolicy policy = MissingKeyPolicy::ZeroFill);

/// Assembles every sample of `set` as one row vec(k_i) of an N x (L*d_k) matrix.
Mat assemble_batch(const SampleSet& set, const KnowledgePack& pack, MissingKeyPolicy policy,
                   std::vector<std::uint8_t>* missing = nullptr);

/// C x L grid of contiguous chunks of length s = d_k / C.
struct ChunkedKnowledge {
  int chunks = 0;
  int num_fields = 0;
  int chunk_size = 0;
  /// grid[j * chunks + c] is chunk c of field j.
  std::vector<std::vector<float>> grid;

  const std::vector<float>& at(int c, int j) const {
    return grid[static_cast<std::size_t>(j) * chunks + c];
  }
};

/// Partition each column into C contiguous chunks. Requires C | d_k.
ChunkedKnowledge chunk(const KnowledgeMatrix& k, int chunks);
KnowledgeMatrix unchunk(const ChunkedKnowledge& c);

}  // namespace kser
