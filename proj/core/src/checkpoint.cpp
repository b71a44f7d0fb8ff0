#include "kser/checkpoint.hpp"

#include "kser/error.hpp"

#include <fstream>
#include <map>

namespace kser {

namespace fs = std::filesystem;

namespace {

constexpr int kFormatVersion = 1;

void write_floats(const fs::path& path, const Mat& m) {
  std::vector<float> buf(static_cast<std::size_t>(m.size()));
  for (long i = 0; i < m.size(); ++i) buf[static_cast<std::size_t>(i)] = static_cast<float>(m.data()[i]);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!out) throw DataError("cannot write " + path.string());
}

Mat read_floats(const fs::path& path, long rows, long cols) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  const auto bytes = fs::file_size(path);
  if (bytes != static_cast<std::uintmax_t>(rows * cols) * sizeof(float))
    throw DataError(path.string() + ": expected " + std::to_string(rows * cols * 4) + " bytes, found " +
                    std::to_string(bytes));
  std::vector<float> buf(static_cast<std::size_t>(rows * cols));
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
  Mat m(rows, cols);
  for (long i = 0; i < m.size(); ++i) m.data()[i] = buf[static_cast<std::size_t>(i)];
  return m;
}

}  // namespace

void round_to_f32(KserModel& model) {
  for (Parameter* p : model.parameters())
    p->value = p->value.unaryExpr([](double v) { return static_cast<double>(static_cast<float>(v)); });
}

void save_checkpoint(const fs::path& dir, KserModel& model, const CheckpointInfo& info) {
  std::error_code ec;
  fs::create_directories(dir / "params", ec);
  if (!ec) fs::create_directories(dir / "vocab", ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());

  ordered_json meta;
  meta["format_version"] = kFormatVersion;
  meta["schema_hash"] = info.schema_hash;
  meta["strategy"] = to_string(info.strategy);
  meta["ablation"] = to_string(info.ablation);
  meta["dk"] = info.dk;
  meta["num_fields"] = info.num_fields;
  meta["embedding_width"] = model.embedding().width();
  meta["trunk_width"] = model.backbone().trunk_width();
  meta["knowledge_width"] = model.head().knowledge_width();
  meta["model"] = to_json(info.model);
  meta["vocab"] = {{"fields", info.vocab.names}, {"history_length", info.vocab.history_length}};

  ordered_json params = ordered_json::array();
  for (Parameter* p : model.parameters()) {
    params.push_back({{"name", p->name},
                      {"rows", p->value.rows()},
                      {"cols", p->value.cols()},
                      {"trainable", p->trainable}});
    write_floats(dir / "params" / (p->name + ".f32"), p->value);
  }
  meta["params"] = params;
  meta["config"] = info.config;

  for (std::size_t f = 0; f < info.vocab.names.size(); ++f) {
    const fs::path path = dir / "vocab" / (info.vocab.names[f] + ".txt");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    for (const auto& t : info.vocab.vocabs[f].tokens()) out << t << '\n';
    if (!out) throw DataError("cannot write " + path.string());
  }

  std::ofstream out(dir / "meta.json", std::ios::binary | std::ios::trunc);
  out << meta.dump(2) << '\n';
  if (!out) throw DataError("cannot write " + (dir / "meta.json").string());
}

LoadedCheckpoint load_checkpoint(const fs::path& dir, std::optional<std::uint64_t> expected_hash) {
  const fs::path meta_path = dir / "meta.json";
  std::ifstream in(meta_path);
  if (!in) throw DataError("cannot open checkpoint " + meta_path.string());
  ordered_json meta;
  try {
    meta = ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(meta_path.string() + ": " + e.what());
  }

  LoadedCheckpoint out;
  auto& info = out.info;
  try {
    if (meta.at("format_version").get<int>() != kFormatVersion)
      throw DataError(meta_path.string() + ": unsupported checkpoint format version");
    info.schema_hash = meta.at("schema_hash").get<std::uint64_t>();
    info.strategy = parse_strategy(meta.at("strategy").get<std::string>());
    info.ablation = parse_ablation(meta.at("ablation").get<std::string>());
    info.dk = meta.at("dk").get<int>();
    info.num_fields = meta.at("num_fields").get<int>();
    info.model = model_config_from_json(meta.at("model"));
    info.config = meta.at("config");
    info.vocab.names = meta.at("vocab").at("fields").get<std::vector<std::string>>();
    info.vocab.history_length = meta.at("vocab").at("history_length").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(meta_path.string() + ": " + e.what());
  }
  if (expected_hash && *expected_hash != info.schema_hash)
    throw ValidationError("checkpoint " + dir.string() + " was trained on a different feature schema");

  for (const auto& name : info.vocab.names) {
    const fs::path path = dir / "vocab" / (name + ".txt");
    std::ifstream vf(path);
    if (!vf) throw DataError("cannot open " + path.string());
    std::vector<std::string> tokens;
    for (std::string line; std::getline(vf, line);) tokens.push_back(line);
    info.vocab.vocabs.emplace_back(std::move(tokens));
  }
  if (info.vocab.hash(info.model.field_width) != info.schema_hash)
    throw DataError("checkpoint " + dir.string() + ": vocabulary does not match its schema hash");

  // Rebuild the architecture; initial values are overwritten below.
  const FeatureSchema schema = info.vocab.schema(info.model.field_width);
  Rng rng(0);
  switch (info.strategy) {
    case Strategy::Base:
      out.model = KserModel::make_base(info.model, schema, rng);
      break;
    case Strategy::AllParams:
      out.model = KserModel::make_all_params(info.model, schema, info.dk, info.num_fields, info.ablation, rng);
      break;
    case Strategy::ExtractorOnly: {
      const KserModel base = KserModel::make_base(info.model, schema, rng);
      out.model = KserModel::make_extractor_only(base, info.model, info.dk, info.num_fields, info.ablation, rng);
      break;
    }
  }

  std::map<std::string, Parameter*> by_name;
  for (Parameter* p : out.model.parameters()) by_name[p->name] = p;
  const auto& table = meta.at("params");
  if (table.size() != by_name.size())
    throw DataError("checkpoint " + dir.string() + " lists " + std::to_string(table.size()) +
                    " parameters; the architecture has " + std::to_string(by_name.size()));
  for (const auto& entry : table) {
    const std::string name = entry.at("name");
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError("checkpoint " + dir.string() + ": unexpected parameter " + name);
    Parameter& p = *it->second;
    const long rows = entry.at("rows"), cols = entry.at("cols");
    if (rows != p.value.rows() || cols != p.value.cols())
      throw DataError("checkpoint " + dir.string() + ": parameter " + name + " has the wrong shape");
    p.value = read_floats(dir / "params" / (name + ".f32"), rows, cols);
  }
  return out;
}

}  // namespace kser
