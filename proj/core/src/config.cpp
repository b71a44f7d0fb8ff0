#include "kser/config.hpp"

#include "kser/error.hpp"

#include <fstream>

namespace kser {
namespace {

std::string join(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

bool same_kind(const ordered_json& a, const ordered_json& b) {
  if (a.is_number() && b.is_number()) return true;
  return a.type() == b.type();
}

// Rejects keys absent from the defaults and values of the wrong JSON type.
void check_shape(const ordered_json& doc, const ordered_json& defaults, const std::string& prefix) {
  for (const auto& [key, value] : doc.items()) {
    const std::string path = join(prefix, key);
    if (!defaults.contains(key)) throw ValidationError("config: unknown key '" + path + "'");
    const auto& def = defaults.at(key);
    if (def.is_object()) {
      if (!value.is_object()) throw ValidationError("config: '" + path + "' must be an object");
      check_shape(value, def, path);
      continue;
    }
    if (path == "dataset.synthetic.snr" && value.is_string()) continue;
    if (!same_kind(value, def))
      throw ValidationError("config: '" + path + "' has type " + std::string(value.type_name()) + ", expected " +
                            def.type_name());
  }
}

void merge(ordered_json& into, const ordered_json& from) {
  for (const auto& [key, value] : from.items()) {
    if (value.is_object() && into.contains(key) && into[key].is_object()) {
      merge(into[key], value);
    } else {
      into[key] = value;
    }
  }
}

template <typename T>
T get(const ordered_json& doc, const std::string& dotted) {
  const ordered_json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted.find('.', start);
    node = &node->at(dotted.substr(start, dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  try {
    return node->get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("config: '" + dotted + "': " + e.what());
  }
}

int positive(const ordered_json& doc, const std::string& dotted) {
  const int v = get<int>(doc, dotted);
  if (v < 1) throw ValidationError("config: '" + dotted + "' must be positive");
  return v;
}

int non_negative(const ordered_json& doc, const std::string& dotted) {
  const int v = get<int>(doc, dotted);
  if (v < 0) throw ValidationError("config: '" + dotted + "' must be non-negative");
  return v;
}

template <typename Fn>
auto parse_field(const ordered_json& doc, const std::string& dotted, Fn parse) {
  try {
    return parse(get<std::string>(doc, dotted));
  } catch (const ValidationError& e) {
    throw ValidationError("config: '" + dotted + "': " + e.what());
  }
}

}  // namespace

std::string to_string(MissingKeyPolicy p) { return p == MissingKeyPolicy::Strict ? "strict" : "zero"; }

ordered_json to_json(const ModelConfig& m) {
  ordered_json j;
  j["model"] = {{"backbone", to_string(m.backbone.kind)},
                {"hidden", m.backbone.hidden},
                {"field_width", m.field_width},
                {"din_attention_hidden", m.backbone.din_attention_hidden}};
  j["esfnet"] = {{"chunks", m.esfnet.chunks}, {"kappa", m.esfnet.kappa}, {"gate_hidden", m.esfnet.gate_hidden}};
  j["esa"] = {{"c_x", m.esa.c_x},
              {"c_k", m.esa.c_k},
              {"n", m.esa.n},
              {"m", m.esa.m},
              {"heads", m.esa.heads},
              {"query", to_string(m.esa.query)},
              {"scaled_attention", m.esa.scaled_attention},
              {"refine_hidden", m.esa.refine_hidden},
              {"refine_out", m.esa.refine_out},
              {"output_proj", m.esa.output_proj},
              {"output_width", m.esa.output_width}};
  return j;
}

ModelConfig model_config_from_json(const ordered_json& doc) {
  ModelConfig m;
  m.backbone.kind = parse_field(doc, "model.backbone", parse_backbone_kind);
  m.backbone.hidden = get<std::vector<int>>(doc, "model.hidden");
  if (m.backbone.hidden.empty()) throw ValidationError("config: 'model.hidden' must list at least one layer");
  for (int h : m.backbone.hidden)
    if (h < 1) throw ValidationError("config: 'model.hidden' widths must be positive");
  m.field_width = positive(doc, "model.field_width");
  m.backbone.din_attention_hidden = positive(doc, "model.din_attention_hidden");

  m.esfnet.chunks = positive(doc, "esfnet.chunks");
  m.esfnet.kappa = get<double>(doc, "esfnet.kappa");
  if (!(m.esfnet.kappa > 0)) throw ValidationError("config: 'esfnet.kappa' must be positive");
  m.esfnet.gate_hidden = non_negative(doc, "esfnet.gate_hidden");

  m.esa.c_x = positive(doc, "esa.c_x");
  m.esa.c_k = positive(doc, "esa.c_k");
  m.esa.n = positive(doc, "esa.n");
  m.esa.m = positive(doc, "esa.m");
  m.esa.heads = positive(doc, "esa.heads");
  m.esa.query = parse_field(doc, "esa.query", parse_query_strategy);
  m.esa.scaled_attention = get<bool>(doc, "esa.scaled_attention");
  m.esa.refine_hidden = non_negative(doc, "esa.refine_hidden");
  m.esa.refine_out = non_negative(doc, "esa.refine_out");
  m.esa.output_proj = get<bool>(doc, "esa.output_proj");
  m.esa.output_width = non_negative(doc, "esa.output_width");
  return m;
}

ordered_json default_config_json() {
  const ExperimentConfig d;
  ordered_json j;
  j["dataset"] = {{"kind", d.dataset.kind},
                  {"path", d.dataset.path},
                  {"cache", d.dataset.cache},
                  {"h_max", d.dataset.h_max},
                  {"min_count", d.dataset.min_count},
                  {"split", {d.dataset.split.train, d.dataset.split.val, d.dataset.split.test}},
                  {"synthetic_seed", d.dataset.synthetic_seed}};
  const nlohmann::json spec = d.dataset.synthetic.to_json();
  ordered_json synthetic;
  for (const auto& [k, v] : spec.items()) synthetic[k] = v;
  j["dataset"]["synthetic"] = synthetic;
  j["knowledge"] = {{"path", d.knowledge.path}, {"missing", to_string(d.knowledge.missing)}};
  merge(j, to_json(d.model));
  j["train"] = {{"strategy", to_string(d.train.strategy)},
                {"lr", d.train.lr},
                {"lr_grid", d.lr_grid},
                {"batch_size", d.train.batch_size},
                {"max_epochs", d.train.max_epochs},
                {"patience", d.train.patience},
                {"max_steps", d.train.max_steps},
                {"seed", d.train.seed},
                {"base_checkpoint", d.base_checkpoint}};
  j["ablation"] = to_string(d.ablation);
  j["evaluate"] = {{"checkpoint", d.checkpoint}, {"split", d.eval_split}};
  j["diagnostics"] = {{"samples", d.diagnostics_samples}};
  std::vector<std::string> variants;
  for (auto a : d.ablate_variants) variants.push_back(to_string(a));
  j["ablate"] = {{"variants", variants}, {"strategy", to_string(d.ablate_strategy)}};
  return j;
}

void apply_override(ordered_json& doc, const std::string& dotted, const std::string& value) {
  if (dotted.empty()) throw ValidationError("--set needs a key");
  ordered_json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted.find('.', start);
    const std::string key = dotted.substr(start, dot - start);
    if (key.empty()) throw ValidationError("--set: malformed key '" + dotted + "'");
    if (dot == std::string::npos) {
      ordered_json parsed = ordered_json::parse(value, nullptr, false);
      (*node)[key] = parsed.is_discarded() ? ordered_json(value) : std::move(parsed);
      return;
    }
    if (!node->contains(key) || !(*node)[key].is_object()) (*node)[key] = ordered_json::object();
    node = &(*node)[key];
    start = dot + 1;
  }
}

ExperimentConfig load_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
  ordered_json doc = default_config_json();
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) throw ValidationError("cannot open config " + file.string());
    ordered_json user;
    try {
      user = ordered_json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(file.string() + ": " + e.what());
    }
    if (!user.is_object()) throw ValidationError(file.string() + ": config must be a JSON object");
    check_shape(user, doc, "");
    merge(doc, user);
  }
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + kv + "'");
    ordered_json patch = ordered_json::object();
    apply_override(patch, kv.substr(0, eq), kv.substr(eq + 1));
    check_shape(patch, default_config_json(), "");
    merge(doc, patch);
  }
  return parse_config(doc);
}

ExperimentConfig parse_config(const ordered_json& doc) {
  check_shape(doc, default_config_json(), "");
  ExperimentConfig c;
  c.echo = doc;

  auto& ds = c.dataset;
  ds.kind = get<std::string>(doc, "dataset.kind");
  if (ds.kind != "synthetic") parse_field(doc, "dataset.kind", parse_dataset_kind);
  ds.path = get<std::string>(doc, "dataset.path");
  ds.cache = get<std::string>(doc, "dataset.cache");
  const int h_max = get<int>(doc, "dataset.h_max");
  if (h_max < 1) throw ValidationError("config: 'dataset.h_max' must be positive");
  ds.h_max = static_cast<std::size_t>(h_max);
  const int min_count = get<int>(doc, "dataset.min_count");
  if (min_count < 1) throw ValidationError("config: 'dataset.min_count' must be positive");
  ds.min_count = static_cast<std::size_t>(min_count);
  const auto split = get<std::vector<double>>(doc, "dataset.split");
  if (split.size() != 3) throw ValidationError("config: 'dataset.split' must hold three ratios");
  ds.split = {split[0], split[1], split[2]};
  ds.synthetic_seed = get<std::uint64_t>(doc, "dataset.synthetic_seed");
  try {
    ds.synthetic = SyntheticSpec::from_json(doc.at("dataset").at("synthetic"));
  } catch (const ValidationError& e) {
    throw ValidationError("config: 'dataset.synthetic': " + std::string(e.what()));
  }
  if (ds.kind != "synthetic" && ds.path.empty() && ds.cache.empty())
    throw ValidationError("config: 'dataset.path' or 'dataset.cache' is required for " + ds.kind + " data");

  c.knowledge.path = get<std::string>(doc, "knowledge.path");
  c.knowledge.missing = parse_field(doc, "knowledge.missing", parse_missing_policy);

  c.model = model_config_from_json(doc);

  auto& t = c.train;
  t.strategy = parse_field(doc, "train.strategy", parse_strategy);
  t.lr = get<double>(doc, "train.lr");
  if (!(t.lr > 0)) throw ValidationError("config: 'train.lr' must be positive");
  c.lr_grid = get<std::vector<double>>(doc, "train.lr_grid");
  for (double lr : c.lr_grid)
    if (!(lr > 0)) throw ValidationError("config: 'train.lr_grid' entries must be positive");
  t.batch_size = positive(doc, "train.batch_size");
  t.max_epochs = non_negative(doc, "train.max_epochs");
  t.patience = positive(doc, "train.patience");
  t.max_steps = get<long>(doc, "train.max_steps");
  if (t.max_steps < 0) throw ValidationError("config: 'train.max_steps' must be non-negative");
  t.seed = get<std::uint64_t>(doc, "train.seed");
  c.base_checkpoint = get<std::string>(doc, "train.base_checkpoint");

  c.ablation = parse_field(doc, "ablation", parse_ablation);
  c.checkpoint = get<std::string>(doc, "evaluate.checkpoint");
  c.eval_split = get<std::string>(doc, "evaluate.split");
  if (c.eval_split != "train" && c.eval_split != "val" && c.eval_split != "test")
    throw ValidationError("config: 'evaluate.split' must be train, val or test");
  const int samples = get<int>(doc, "diagnostics.samples");
  if (samples < 0) throw ValidationError("config: 'diagnostics.samples' must be non-negative");
  c.diagnostics_samples = static_cast<std::size_t>(samples);

  c.ablate_variants.clear();
  for (const auto& v : get<std::vector<std::string>>(doc, "ablate.variants")) {
    try {
      c.ablate_variants.push_back(parse_ablation(v == "full" ? "none" : v));
    } catch (const ValidationError& e) {
      throw ValidationError("config: 'ablate.variants': " + std::string(e.what()));
    }
  }
  if (c.ablate_variants.empty()) throw ValidationError("config: 'ablate.variants' must not be empty");
  c.ablate_strategy = parse_field(doc, "ablate.strategy", parse_strategy);
  if (c.ablate_strategy == Strategy::Base)
    throw ValidationError("config: 'ablate.strategy' must be all_params or extractor_only");
  return c;
}

}  // namespace kser
