#include "kser/knowledge.hpp"

#include "kser/error.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace kser {

static_assert(std::endian::native == std::endian::little, "pack I/O assumes a little-endian host");

KeyedBy parse_keyed_by(const std::string& s) {
  if (s == "user_id") return KeyedBy::UserId;
  if (s == "item_id") return KeyedBy::ItemId;
  if (s == "sample_id") return KeyedBy::SampleId;
  throw ValidationError("unknown keyed_by '" + s + "'");
}

std::string to_string(KeyedBy k) {
  switch (k) {
    case KeyedBy::UserId: return "user_id";
    case KeyedBy::ItemId: return "item_id";
    default: return "sample_id";
  }
}

MissingKeyPolicy parse_missing_policy(const std::string& s) {
  if (s == "zero" || s == "fallback") return MissingKeyPolicy::ZeroFill;
  if (s == "strict") return MissingKeyPolicy::Strict;
  throw ValidationError("unknown missing-key policy '" + s + "' (expected fallback or strict)");
}

KnowledgeField::KnowledgeField(std::string name, KeyedBy keyed_by, int dim,
                               std::vector<std::string> keys, std::vector<float> values)
    : name_(std::move(name)), keyed_by_(keyed_by), dim_(dim), keys_(std::move(keys)),
      values_(std::move(values)) {
  if (name_.empty() || name_.find('/') != std::string::npos)
    throw DataError("invalid knowledge field name '" + name_ + "'");
  if (dim_ < 1) throw DataError("field " + name_ + ": dim must be positive");
  if (keys_.empty()) throw DataError("field " + name_ + ": key set is empty");
  if (values_.size() != keys_.size() * static_cast<std::size_t>(dim_))
    throw DataError("field " + name_ + ": value count does not match count x dim");
  for (std::size_t r = 0; r < keys_.size(); ++r) {
    const auto& key = keys_[r];
    if (key.empty() || key.find('\n') != std::string::npos)
      throw DataError("field " + name_ + ": invalid key at row " + std::to_string(r));
    if (!index_.emplace(key, r).second)
      throw DataError("field " + name_ + ": duplicate key '" + key + "' at row " + std::to_string(r));
    for (int c = 0; c < dim_; ++c) {
      if (!std::isfinite(values_[r * static_cast<std::size_t>(dim_) + static_cast<std::size_t>(c)]))
        throw DataError("field " + name_ + ": non-finite value at row " + std::to_string(r));
    }
  }
}

const float* KnowledgeField::find(const std::string& key) const {
  const auto it = index_.find(key);
  if (it == index_.end()) return nullptr;
  return values_.data() + it->second * static_cast<std::size_t>(dim_);
}

KnowledgePack::KnowledgePack(std::vector<KnowledgeField> fields) : fields_(std::move(fields)) {
  if (fields_.empty()) throw DataError("knowledge pack has no fields");
  for (std::size_t i = 0; i < fields_.size(); ++i) {
    if (fields_[i].dim() != fields_[0].dim())
      throw DataError("field " + fields_[i].name() + ": dim " + std::to_string(fields_[i].dim()) +
                      " differs from shared d_k " + std::to_string(fields_[0].dim()));
    for (std::size_t j = 0; j < i; ++j)
      if (fields_[j].name() == fields_[i].name())
        throw DataError("duplicate knowledge field '" + fields_[i].name() + "'");
  }
}

bool operator==(const KnowledgePack& a, const KnowledgePack& b) {
  if (a.fields_.size() != b.fields_.size()) return false;
  for (std::size_t i = 0; i < a.fields_.size(); ++i) {
    const auto& x = a.fields_[i];
    const auto& y = b.fields_[i];
    if (x.name() != y.name() || x.keyed_by() != y.keyed_by() || x.dim() != y.dim() || x.keys() != y.keys())
      return false;
    if (std::memcmp(x.values().data(), y.values().data(), x.values().size() * sizeof(float)) != 0)
      return false;
  }
  return true;
}

// ---- disk layout -----------------------------------------------------------------

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

KnowledgePack load_pack(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  std::ifstream mf(manifest_path);
  if (!mf) throw DataError("cannot open " + manifest_path.string());
  ojson manifest;
  try {
    manifest = ojson::parse(mf);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(manifest_path.string() + ": " + e.what());
  }
  try {
    if (manifest.at("dtype") != "f32") throw DataError("pack dtype must be f32");
    if (manifest.at("byte_order") != "little-endian") throw DataError("pack byte_order must be little-endian");
    if (manifest.at("layout") != "row-major") throw DataError("pack layout must be row-major");

    std::vector<KnowledgeField> fields;
    for (const auto& f : manifest.at("fields")) {
      const std::string name = f.at("name");
      const int dim = f.at("dim");
      const std::size_t count = f.at("count");
      const KeyedBy keyed_by = parse_keyed_by(f.at("keyed_by"));

      std::ifstream kf(dir / (name + ".keys"));
      if (!kf) throw DataError("field " + name + ": cannot open " + (dir / (name + ".keys")).string());
      std::vector<std::string> keys;
      for (std::string line; std::getline(kf, line);) keys.push_back(line);
      if (keys.size() != count)
        throw DataError("field " + name + ": " + std::to_string(keys.size()) + " keys but manifest count is " +
                        std::to_string(count));

      const fs::path vpath = dir / (name + ".f32");
      std::error_code ec;
      const auto bytes = fs::file_size(vpath, ec);
      if (ec) throw DataError("field " + name + ": cannot stat " + vpath.string());
      const std::uintmax_t expected = count * static_cast<std::uintmax_t>(dim) * sizeof(float);
      if (bytes != expected)
        throw DataError("field " + name + ": byte-length mismatch in " + vpath.string() + " (expected " +
                        std::to_string(expected) + ", found " + std::to_string(bytes) + ")");
      std::vector<float> values(count * static_cast<std::size_t>(dim));
      std::ifstream vf(vpath, std::ios::binary);
      vf.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(expected));
      if (!vf) throw DataError("field " + name + ": short read from " + vpath.string());
      fields.emplace_back(name, keyed_by, dim, std::move(keys), std::move(values));
    }
    return KnowledgePack(std::move(fields));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(manifest_path.string() + ": " + e.what());
  }
}

void write_pack(const KnowledgePack& pack, const fs::path& dir) {
  if (pack.num_fields() == 0) throw DataError("refusing to write a knowledge pack with no fields");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());

  ojson manifest;
  manifest["fields"] = ojson::array();
  for (const auto& f : pack.fields()) {
    manifest["fields"].push_back(
        {{"name", f.name()}, {"dim", f.dim()}, {"keyed_by", to_string(f.keyed_by())}, {"count", f.count()}});

    const fs::path kpath = dir / (f.name() + ".keys");
    std::ofstream kf(kpath, std::ios::binary | std::ios::trunc);
    for (const auto& k : f.keys()) kf << k << '\n';
    if (!kf) throw DataError("cannot write " + kpath.string());

    const fs::path vpath = dir / (f.name() + ".f32");
    std::ofstream vf(vpath, std::ios::binary | std::ios::trunc);
    vf.write(reinterpret_cast<const char*>(f.values().data()),
             static_cast<std::streamsize>(f.values().size() * sizeof(float)));
    if (!vf) throw DataError("cannot write " + vpath.string());
  }
  manifest["dtype"] = "f32";
  manifest["byte_order"] = "little-endian";
  manifest["layout"] = "row-major";

  const fs::path mpath = dir / "manifest.json";
  std::ofstream out(mpath, std::ios::binary | std::ios::trunc);
  out << manifest.dump(2) << '\n';
  if (!out) throw DataError("cannot write " + mpath.string());
}

// ---- assembly and chunking -------------------------------------------------------

namespace {

const std::string& join_key(const Sample& s, KeyedBy k) {
  switch (k) {
    case KeyedBy::UserId: return s.user_id;
    case KeyedBy::ItemId: return s.item_id;
    default: return s.sample_id;
  }
}

}  // namespace

AssembledKnowledge assemble_knowledge(const Sample& sample, const KnowledgePack& pack, MissingKeyPolicy policy) {
  if (pack.num_fields() == 0) throw DataError("knowledge pack has no fields");
  AssembledKnowledge out{KnowledgeMatrix(pack.dim(), static_cast<int>(pack.num_fields())), false};
  for (std::size_t j = 0; j < pack.num_fields(); ++j) {
    const auto& field = pack.fields()[j];
    const std::string& key = join_key(sample, field.keyed_by());
    const float* row = field.find(key);
    if (row == nullptr) {
      if (policy == MissingKeyPolicy::Strict)
        throw DataError("knowledge field " + field.name() + " has no vector for key '" + key + "'");
      out.missing = true;
      continue;
    }
    std::copy(row, row + field.dim(), out.matrix.data.begin() + static_cast<long>(j) * field.dim());
  }
  return out;
}

Mat assemble_batch(const SampleSet& set, const KnowledgePack& pack, MissingKeyPolicy policy,
                   std::vector<std::uint8_t>* missing) {
  const long width = static_cast<long>(pack.num_fields()) * pack.dim();
  Mat out(static_cast<long>(set.size()), width);
  if (missing) missing->assign(set.size(), 0);
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto a = assemble_knowledge(set.samples[i], pack, policy);
    for (long c = 0; c < width; ++c) out(static_cast<long>(i), c) = a.matrix.data[static_cast<std::size_t>(c)];
    if (missing) (*missing)[i] = a.missing ? 1 : 0;
  }
  return out;
}

ChunkedKnowledge chunk(const KnowledgeMatrix& k, int chunks) {
  if (chunks < 1 || k.dk % chunks != 0) {
    std::ostringstream os;
    os << "chunk count " << chunks << " must divide the knowledge dimension d_k = " << k.dk
       << " (the knowledge dimension is assumed divisible by the number of chunks)";
    throw ValidationError(os.str());
  }
  ChunkedKnowledge out;
  out.chunks = chunks;
  out.num_fields = k.num_fields;
  out.chunk_size = k.dk / chunks;
  out.grid.resize(static_cast<std::size_t>(chunks) * k.num_fields);
  for (int j = 0; j < k.num_fields; ++j) {
    for (int c = 0; c < chunks; ++c) {
      auto& dst = out.grid[static_cast<std::size_t>(j) * chunks + c];
      const auto first = k.data.begin() + static_cast<long>(j) * k.dk + static_cast<long>(c) * out.chunk_size;
      dst.assign(first, first + out.chunk_size);
    }
  }
  return out;
}

KnowledgeMatrix unchunk(const ChunkedKnowledge& c) {
  KnowledgeMatrix k(c.chunks * c.chunk_size, c.num_fields);
  for (int j = 0; j < c.num_fields; ++j)
    for (int ch = 0; ch < c.chunks; ++ch) {
      const auto& v = c.at(ch, j);
      std::copy(v.begin(), v.end(), k.data.begin() + static_cast<long>(j) * k.dk + static_cast<long>(ch) * c.chunk_size);
    }
  return k;
}

}  // namespace kser
