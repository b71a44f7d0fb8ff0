#include "kser/experiments.hpp"

#include "kser/error.hpp"

#include <spdlog/spdlog.h>

#include <fcntl.h>
#include <unistd.h>

#include <bit>
#include <cstdio>
#include <exception>
#include <fstream>
#include <numeric>

namespace kser {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

constexpr char kCacheMagic[8] = {'K', 'S', 'E', 'R', 'S', 'E', 'T', '1'};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void write_json(const fs::path& path, const ordered_json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << j.dump(2) << '\n';
  if (!out) throw DataError("cannot write " + path.string());
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

void require_out(const fs::path& out) {
  if (out.empty()) throw ValidationError("--out is required");
}

// ---- binary sample cache ------------------------------------------------------------

template <typename T>
void put(std::ostream& o, T v) {
  o.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_str(std::ostream& o, const std::string& s) {
  put<std::uint32_t>(o, static_cast<std::uint32_t>(s.size()));
  o.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T take(std::istream& in, const fs::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw DataError(path.string() + ": truncated sample cache");
  return v;
}

std::string take_str(std::istream& in, const fs::path& path) {
  const auto n = take<std::uint32_t>(in, path);
  std::string s(n, '\0');
  if (!in.read(s.data(), n)) throw DataError(path.string() + ": truncated sample cache");
  return s;
}

SplitTag parse_split_tag(const std::string& s) {
  if (s == "train") return SplitTag::Train;
  if (s == "val") return SplitTag::Val;
  if (s == "test") return SplitTag::Test;
  return SplitTag::All;
}

const SplitData& pick_split(const TrainingData& td, const std::string& name) {
  if (name == "train") return td.train;
  if (name == "val") return td.val;
  return td.test;
}

const SampleSet& pick_split(const SplitSets& s, const std::string& name) {
  if (name == "train") return s.train;
  if (name == "val") return s.val;
  return s.test;
}

std::size_t count_missing(const TrainingData& td) {
  std::size_t n = 0;
  for (const auto* s : {&td.train, &td.val, &td.test})
    n += static_cast<std::size_t>(std::count(s->knowledge_missing.begin(), s->knowledge_missing.end(), 1));
  return n;
}

void check_schema(const FeatureVocab& ckpt_vocab, std::uint64_t ckpt_hash, const SplitSets& splits, int width,
                  std::size_t min_count, const std::string& what) {
  if (FeatureVocab::build(splits.train, min_count).hash(width) != ckpt_hash || ckpt_vocab.hash(width) != ckpt_hash)
    throw ValidationError(what + " was trained on a different feature schema than the configured dataset");
}

const KnowledgePack& require_pack(const LoadedData& d, const std::string& why) {
  if (!d.pack) throw ValidationError("knowledge: a pack is required " + why + " (set knowledge.path)");
  return *d.pack;
}

}  // namespace

// ---- lock ----------------------------------------------------------------------------

OutputLock::OutputLock(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory " + dir.string() + ": " + ec.message());
  path_ = dir / ".kser.lock";
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    path_.clear();
    throw DataError("output directory " + dir.string() + " is in use by another run (remove .kser.lock if stale)");
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] const auto written = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

OutputLock::~OutputLock() {
  if (path_.empty()) return;
  std::error_code ec;
  fs::remove(path_, ec);
}

// ---- data ------------------------------------------------------------------------------

void write_sample_cache(const SampleSet& set, const fs::path& path) {
  std::ofstream o = open_out(path);
  o.write(kCacheMagic, sizeof kCacheMagic);
  put_str(o, to_string(set.split));
  put<std::uint64_t>(o, set.history_length);
  put<std::uint32_t>(o, static_cast<std::uint32_t>(set.context_fields.size()));
  for (const auto& c : set.context_fields) put_str(o, c);
  put<std::uint64_t>(o, set.samples.size());
  for (const auto& s : set.samples) {
    put_str(o, s.sample_id);
    put_str(o, s.user_id);
    put_str(o, s.item_id);
    put<std::uint8_t>(o, static_cast<std::uint8_t>(s.label));
    put<std::int64_t>(o, s.timestamp);
    put<std::uint32_t>(o, static_cast<std::uint32_t>(s.history.size()));
    for (const auto& h : s.history) put_str(o, h);
    for (const auto& c : s.context) put_str(o, c);
  }
  if (!o) throw DataError("cannot write " + path.string());
}

SampleSet read_sample_cache(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open sample cache " + path.string());
  char magic[sizeof kCacheMagic];
  if (!in.read(magic, sizeof magic) || !std::equal(magic, magic + sizeof magic, kCacheMagic))
    throw DataError(path.string() + ": not a sample cache");
  SampleSet set;
  set.split = parse_split_tag(take_str(in, path));
  set.history_length = take<std::uint64_t>(in, path);
  const auto n_ctx = take<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < n_ctx; ++i) set.context_fields.push_back(take_str(in, path));
  const auto n = take<std::uint64_t>(in, path);
  set.samples.resize(n);
  for (auto& s : set.samples) {
    s.sample_id = take_str(in, path);
    s.user_id = take_str(in, path);
    s.item_id = take_str(in, path);
    s.label = take<std::uint8_t>(in, path);
    s.timestamp = take<std::int64_t>(in, path);
    s.history.resize(take<std::uint32_t>(in, path));
    for (auto& h : s.history) h = take_str(in, path);
    s.context.resize(n_ctx);
    for (auto& c : s.context) c = take_str(in, path);
  }
  return set;
}

namespace {

struct RawData {
  SampleSet samples;
  std::optional<KnowledgePack> pack;
};

RawData load_raw(const ExperimentConfig& cfg) {
  RawData r;
  if (cfg.dataset.kind == "synthetic") {
    auto d = gen_synthetic_dataset(cfg.dataset.synthetic, cfg.dataset.synthetic_seed);
    spdlog::info("synthetic data: {} samples, bayes auc {:.4f}, categorical auc {:.4f}", d.samples.size(),
                 d.oracle.bayes_auc, d.oracle.categorical_auc);
    r.samples = std::move(d.samples);
    r.pack = std::move(d.pack);
  } else {
    r.samples = load_interactions(cfg.dataset.path, parse_dataset_kind(cfg.dataset.kind));
  }
  return r;
}

}  // namespace

LoadedData load_dataset(const ExperimentConfig& cfg) {
  LoadedData d;
  if (!cfg.dataset.cache.empty()) {
    const fs::path dir = cfg.dataset.cache;
    if (!fs::exists(dir / "manifest.json")) throw DataError("no prepared cache at " + dir.string());
    d.splits.train = read_sample_cache(dir / "train.bin");
    d.splits.val = read_sample_cache(dir / "val.bin");
    d.splits.test = read_sample_cache(dir / "test.bin");
    if (fs::exists(dir / "knowledge" / "manifest.json")) d.pack = load_pack(dir / "knowledge");
  } else {
    RawData raw = load_raw(cfg);
    d.splits = chronological_split(build_history(raw.samples, cfg.dataset.h_max), cfg.dataset.split);
    d.pack = std::move(raw.pack);
  }
  if (!cfg.knowledge.path.empty()) d.pack = load_pack(cfg.knowledge.path);
  return d;
}

// ---- training --------------------------------------------------------------------------

TrainOutcome run_training(const ExperimentConfig& cfg, const TrainingData& data, const KserModel* base) {
  const Strategy strategy = cfg.train.strategy;
  if (strategy == Strategy::ExtractorOnly && base == nullptr)
    throw ValidationError("train.base_checkpoint is required when train.strategy=extractor_only");
  const Ablation ablation = strategy == Strategy::Base ? Ablation::None : cfg.ablation;
  const std::vector<double> grid = cfg.lr_grid.empty() ? std::vector<double>{cfg.train.lr} : cfg.lr_grid;

  std::optional<TrainedModel> best;
  TrainOutcome outcome;
  for (double lr : grid) {
    TrainConfig tc = cfg.train;
    tc.lr = lr;
    TrainedModel t = [&] {
      switch (strategy) {
        case Strategy::Base: return train_base(tc, data, cfg.model);
        case Strategy::AllParams: return train_all_params(tc, data, cfg.model, ablation);
        default: return train_extractor_only(tc, data, cfg.model, *base, ablation);
      }
    }();
    outcome.lr_search.emplace_back(lr, t.report.val_auc);
    if (!best || t.report.val_auc > best->report.val_auc) best = std::move(t);
  }

  outcome.trained = std::move(*best);
  auto& model = outcome.trained.model;
  auto& report = outcome.trained.report;
  round_to_f32(model);
  const auto val = evaluate(model, data.val);
  const auto test = evaluate(model, data.test);
  report.val_auc = val.auc;
  report.val_logloss = val.logloss;
  report.auc = test.auc;
  report.logloss = test.logloss;

  if (base != nullptr && strategy == Strategy::ExtractorOnly) {
    KserModel b = *base;
    outcome.base_test = evaluate(b, data.test);
  }

  auto& info = outcome.info;
  info.strategy = strategy;
  info.ablation = ablation;
  info.model = cfg.model;
  info.vocab = data.vocab;
  info.dk = strategy == Strategy::Base ? 0 : data.dk;
  info.num_fields = strategy == Strategy::Base ? 0 : data.num_fields;
  info.schema_hash = data.vocab.hash(data.field_width);
  info.config = cfg.echo;
  return outcome;
}

ordered_json report_json(const ExperimentConfig& cfg, const TrainOutcome& outcome, const TrainingData& data) {
  const auto& r = outcome.trained.report;
  ordered_json j;
  j["strategy"] = to_string(outcome.info.strategy);
  j["ablation"] = to_string(outcome.info.ablation);
  j["backbone"] = to_string(cfg.model.backbone.kind);
  j["seed"] = cfg.train.seed;
  j["lr"] = r.lr;
  j["auc"] = r.auc;
  j["logloss"] = r.logloss;
  j["val_auc"] = r.val_auc;
  j["val_logloss"] = r.val_logloss;
  j["best_epoch"] = r.best_epoch;
  j["steps"] = r.steps;
  j["n_train"] = data.train.size();
  j["n_val"] = data.val.size();
  j["n_test"] = data.test.size();
  j["knowledge_missing"] = count_missing(data);
  j["schema_hash"] = outcome.info.schema_hash;
  ordered_json history = ordered_json::array();
  for (const auto& e : r.history)
    history.push_back(
        {{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_auc", e.val_auc}, {"val_logloss", e.val_logloss}});
  j["history"] = history;
  ordered_json search = ordered_json::array();
  for (const auto& [lr, auc] : outcome.lr_search) search.push_back({{"lr", lr}, {"val_auc", auc}});
  j["lr_search"] = search;
  if (outcome.base_test) {
    const auto imp = improvement(outcome.base_test->auc, outcome.base_test->logloss, r.auc, r.logloss);
    j["reference"] = {{"model", "base"},
                      {"auc", outcome.base_test->auc},
                      {"logloss", outcome.base_test->logloss},
                      {"auc_improvement", imp.auc},
                      {"logloss_improvement", imp.logloss}};
  }
  j["wall_clock_seconds"] = r.wall_clock_seconds;
  j["config"] = cfg.echo;
  return j;
}

// ---- commands --------------------------------------------------------------------------

void cmd_prepare(const ExperimentConfig& cfg, const fs::path& out) {
  require_out(out);
  OutputLock lock(out);
  RawData raw = load_raw(cfg);
  const SplitSets s = chronological_split(build_history(raw.samples, cfg.dataset.h_max), cfg.dataset.split);
  write_sample_cache(s.train, out / "train.bin");
  write_sample_cache(s.val, out / "val.bin");
  write_sample_cache(s.test, out / "test.bin");
  if (raw.pack) write_pack(*raw.pack, out / "knowledge");

  ordered_json m;
  m["format"] = "kser-sample-cache";
  m["version"] = 1;
  m["kind"] = cfg.dataset.kind;
  m["source"] = cfg.dataset.kind == "synthetic" ? ordered_json(cfg.dataset.synthetic.to_json()) : ordered_json(cfg.dataset.path);
  m["h_max"] = cfg.dataset.h_max;
  m["split"] = {cfg.dataset.split.train, cfg.dataset.split.val, cfg.dataset.split.test};
  m["context_fields"] = s.train.context_fields;
  m["counts"] = {{"train", s.train.size()}, {"val", s.val.size()}, {"test", s.test.size()}};
  m["files"] = {{"train", "train.bin"}, {"val", "val.bin"}, {"test", "test.bin"}};
  if (raw.pack) m["knowledge"] = "knowledge";
  write_json(out / "manifest.json", m);
  spdlog::info("prepared {} / {} / {} samples in {}", s.train.size(), s.val.size(), s.test.size(), out.string());
}

void cmd_gen_synth(const ExperimentConfig& cfg, const fs::path& out) {
  require_out(out);
  OutputLock lock(out);
  const auto d = gen_synthetic_dataset(cfg.dataset.synthetic, cfg.dataset.synthetic_seed);
  write_synthetic(d, cfg.dataset.synthetic, cfg.dataset.synthetic_seed, out);
  spdlog::info("wrote {} samples to {} (bayes auc {:.4f}, categorical auc {:.4f})", d.samples.size(), out.string(),
               d.oracle.bayes_auc, d.oracle.categorical_auc);
}

void cmd_train(const ExperimentConfig& cfg, const fs::path& out) {
  require_out(out);
  const Strategy strategy = cfg.train.strategy;
  if (strategy == Strategy::ExtractorOnly && cfg.base_checkpoint.empty())
    throw ValidationError("train.base_checkpoint is required when train.strategy=extractor_only");
  OutputLock lock(out);
  const LoadedData d = load_dataset(cfg);

  std::optional<LoadedCheckpoint> base;
  TrainingData td;
  if (strategy == Strategy::Base) {
    td = prepare_training_data(d.splits, cfg.model.field_width, nullptr, cfg.knowledge.missing, nullptr,
                               cfg.dataset.min_count);
  } else {
    const KnowledgePack& pack = require_pack(d, "for strategy " + to_string(strategy));
    if (strategy == Strategy::ExtractorOnly) {
      base = load_checkpoint(cfg.base_checkpoint);
      if (base->info.strategy != Strategy::Base)
        throw ValidationError("train.base_checkpoint must point at a base-strategy checkpoint");
      check_schema(base->info.vocab, base->info.schema_hash, d.splits, base->info.model.field_width,
                   cfg.dataset.min_count, "base checkpoint " + cfg.base_checkpoint);
      const auto& bm = base->info.model;
      if (bm.field_width != cfg.model.field_width || bm.backbone.kind != cfg.model.backbone.kind ||
          bm.backbone.hidden != cfg.model.backbone.hidden ||
          bm.backbone.din_attention_hidden != cfg.model.backbone.din_attention_hidden)
        throw ValidationError("model block differs from the base checkpoint's; use the base run's model settings");
      td = prepare_training_data(d.splits, cfg.model.field_width, &pack, cfg.knowledge.missing, &base->info.vocab);
    } else {
      td = prepare_training_data(d.splits, cfg.model.field_width, &pack, cfg.knowledge.missing, nullptr,
                                 cfg.dataset.min_count);
    }
  }

  const TrainOutcome outcome = run_training(cfg, td, base ? &base->model : nullptr);
  KserModel model = outcome.trained.model;
  save_checkpoint(out / "checkpoint", model, outcome.info);
  write_json(out / "report.json", report_json(cfg, outcome, td));

  std::ofstream h = open_out(out / "history.tsv");
  h << "epoch\ttrain_loss\tval_auc\tval_logloss\n";
  for (const auto& e : outcome.trained.report.history)
    h << e.epoch << '\t' << num(e.train_loss) << '\t' << num(e.val_auc) << '\t' << num(e.val_logloss) << '\n';
  spdlog::info("test auc {:.5f} logloss {:.5f}", outcome.trained.report.auc, outcome.trained.report.logloss);
}

void cmd_evaluate(const ExperimentConfig& cfg, const fs::path& out) {
  require_out(out);
  if (cfg.checkpoint.empty()) throw ValidationError("evaluate.checkpoint is required");
  OutputLock lock(out);
  LoadedCheckpoint ck = load_checkpoint(cfg.checkpoint);
  const LoadedData d = load_dataset(cfg);
  check_schema(ck.info.vocab, ck.info.schema_hash, d.splits, ck.info.model.field_width,
               cfg.dataset.min_count, "checkpoint " + cfg.checkpoint);
  const KnowledgePack* pack = nullptr;
  if (ck.info.strategy != Strategy::Base) pack = &require_pack(d, "for a knowledge-augmented checkpoint");
  const TrainingData td =
      prepare_training_data(d.splits, ck.info.model.field_width, pack, cfg.knowledge.missing, &ck.info.vocab);
  const SplitData& split = pick_split(td, cfg.eval_split);
  const auto scores = predict(ck.model, split);

  ordered_json m;
  m["checkpoint"] = cfg.checkpoint;
  m["strategy"] = to_string(ck.info.strategy);
  m["ablation"] = to_string(ck.info.ablation);
  m["split"] = cfg.eval_split;
  m["n"] = split.size();
  m["auc"] = compute_auc(scores, split.encoded.labels);
  m["logloss"] = compute_logloss(scores, split.encoded.labels);
  write_json(out / "metrics.json", m);

  std::ofstream p = open_out(out / "predictions.tsv");
  p << "sample_id\tlabel\tscore\n";
  for (std::size_t i = 0; i < scores.size(); ++i)
    p << split.encoded.sample_ids[i] << '\t' << split.encoded.labels[i] << '\t' << num(scores[i]) << '\n';
  spdlog::info("{} auc {:.5f} logloss {:.5f}", cfg.eval_split, m["auc"].get<double>(), m["logloss"].get<double>());
}

void cmd_ablate(const ExperimentConfig& cfg, const fs::path& out) {
  require_out(out);
  OutputLock lock(out);
  const LoadedData d = load_dataset(cfg);
  const KnowledgePack& pack = require_pack(d, "for ablations");
  const TrainingData td = prepare_training_data(d.splits, cfg.model.field_width, &pack, cfg.knowledge.missing,
                                                nullptr, cfg.dataset.min_count);

  ExperimentConfig base_cfg = cfg;
  base_cfg.train.strategy = Strategy::Base;
  const TrainOutcome base = run_training(base_cfg, td, nullptr);
  const auto& br = base.trained.report;

  struct Row {
    Ablation variant;
    std::optional<MetricsReport> report;
    std::string status = "ok";
  };
  std::vector<Row> rows;
  std::exception_ptr first_error;
  for (const Ablation v : cfg.ablate_variants) {
    ExperimentConfig vc = cfg;
    vc.train.strategy = cfg.ablate_strategy;
    vc.ablation = v;
    Row row{v, std::nullopt};
    try {
      row.report = run_training(vc, td, &base.trained.model).trained.report;
    } catch (const Error& e) {
      spdlog::error("variant {} failed: {}", v == Ablation::None ? "full" : to_string(v), e.what());
      row.status = std::string("failed: ") + e.what();
      if (!first_error) first_error = std::current_exception();
    }
    rows.push_back(std::move(row));
  }

  std::ofstream t = open_out(out / "ablation.tsv");
  t << "variant\tstrategy\tauc\tlogloss\tbase_auc\tbase_logloss\tauc_improvement\tlogloss_improvement\tstatus\n";
  ordered_json table = ordered_json::array();
  for (const auto& row : rows) {
    const std::string name = row.variant == Ablation::None ? "full" : to_string(row.variant);
    ordered_json r = {{"variant", name}, {"strategy", to_string(cfg.ablate_strategy)}};
    t << name << '\t' << to_string(cfg.ablate_strategy) << '\t';
    if (row.report) {
      const auto imp = improvement(br.auc, br.logloss, row.report->auc, row.report->logloss);
      t << num(row.report->auc) << '\t' << num(row.report->logloss) << '\t' << num(br.auc) << '\t'
        << num(br.logloss) << '\t' << num(imp.auc) << '\t' << num(imp.logloss);
      r["auc"] = row.report->auc;
      r["logloss"] = row.report->logloss;
      r["val_auc"] = row.report->val_auc;
      r["auc_improvement"] = imp.auc;
      r["logloss_improvement"] = imp.logloss;
    } else {
      t << "\t\t" << num(br.auc) << '\t' << num(br.logloss) << "\t\t";
    }
    t << '\t' << row.status << '\n';
    r["base_auc"] = br.auc;
    r["base_logloss"] = br.logloss;
    r["status"] = row.status;
    table.push_back(r);
  }
  if (!t) throw DataError("cannot write " + (out / "ablation.tsv").string());

  ordered_json j;
  j["seed"] = cfg.train.seed;
  j["base"] = {{"auc", br.auc}, {"logloss", br.logloss}, {"val_auc", br.val_auc}};
  j["rows"] = table;
  j["external_baselines"] = {{"KAR", "not reproduced"}};
  j["config"] = cfg.echo;
  write_json(out / "ablation.json", j);
  if (first_error) std::rethrow_exception(first_error);
}

void cmd_diagnostics(const ExperimentConfig& cfg, const fs::path& out) {
  require_out(out);
  if (cfg.checkpoint.empty()) throw ValidationError("evaluate.checkpoint is required for diagnostics");
  OutputLock lock(out);
  LoadedCheckpoint ck = load_checkpoint(cfg.checkpoint);
  if (ck.info.strategy == Strategy::Base || !ck.model.extractor())
    throw ValidationError("checkpoint " + cfg.checkpoint + " has no knowledge extractor (base-only)");
  const LoadedData d = load_dataset(cfg);
  check_schema(ck.info.vocab, ck.info.schema_hash, d.splits, ck.info.model.field_width,
               cfg.dataset.min_count, "checkpoint " + cfg.checkpoint);
  const KnowledgePack& pack = require_pack(d, "for diagnostics");

  // Encode only the evaluated split.
  SplitSets only;
  only.train = d.splits.train;
  only.val.context_fields = d.splits.train.context_fields;
  only.val.history_length = d.splits.train.history_length;
  only.test = pick_split(d.splits, cfg.eval_split);
  const TrainingData td =
      prepare_training_data(only, ck.info.model.field_width, &pack, cfg.knowledge.missing, &ck.info.vocab);
  const SplitData& split = td.test;

  std::vector<std::size_t> rows(split.size());
  std::iota(rows.begin(), rows.end(), 0);
  Rng rng(cfg.train.seed);
  rng.shuffle(rows);
  rows.resize(std::min(rows.size(), cfg.diagnostics_samples));

  const int dk = pack.dim();
  const int L = static_cast<int>(pack.num_fields());
  const bool has_gate = static_cast<bool>(ck.model.extractor()->esfnet());
  const bool has_esa = static_cast<bool>(ck.model.extractor()->esa());
  const int C = ck.info.model.esfnet.chunks;
  const int cx = ck.info.model.esa.c_x, ckk = ck.info.model.esa.c_k;

  Mat pre, post, gates;
  std::vector<Mat> cross;
  if (!rows.empty()) {
    const Batch b = make_batch(split, rows);
    Graph g;
    const auto f = ck.model.forward(g, b);
    const auto& ext = *f.extractor;
    pre = b.knowledge;
    post = ext.filtered.value();
    if (has_gate) gates = ext.gate_weights.value();
    cross = ext.cross_scores;
  }

  std::vector<std::string> ids;
  for (auto r : rows) ids.push_back(split.encoded.sample_ids[r]);

  if (has_gate) {
    std::ofstream gt = open_out(out / "gate_weights.tsv");
    gt << "sample_id\tfield_name";
    for (int c = 0; c < C; ++c) gt << "\tc" << c;
    gt << '\n';
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (int j = 0; j < L; ++j) {
        gt << ids[i] << '\t' << pack.fields()[static_cast<std::size_t>(j)].name();
        for (int c = 0; c < C; ++c) gt << '\t' << num(gates(static_cast<long>(i), j * C + c));
        gt << '\n';
      }
  }
  if (has_esa) {
    std::ofstream at = open_out(out / "attention.tsv");
    at << "sample_id\tfield\tqchunk\tkchunk\tscore\n";
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (int j = 0; j < L; ++j)
        for (int q = 0; q < cx; ++q)
          for (int k = 0; k < ckk; ++k)
            at << ids[i] << '\t' << pack.fields()[static_cast<std::size_t>(j)].name() << '\t' << q << '\t' << k
               << '\t' << num(cross[static_cast<std::size_t>(j)](static_cast<long>(i) * cx + q, k)) << '\n';
  }

  const auto write_matrix = [&](const fs::path& path, const Mat& m) {
    std::ofstream o = open_out(path);
    for (long i = 0; i < m.size(); ++i) {
      const float v = static_cast<float>(m.data()[i]);
      o.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
    if (!o) throw DataError("cannot write " + path.string());
  };
  write_matrix(out / "knowledge_pre.f32", pre);
  write_matrix(out / "knowledge_post.f32", post);

  ordered_json m;
  m["rows"] = rows.size();
  m["cols"] = dk * L;
  m["dtype"] = "f32";
  m["byte_order"] = "little-endian";
  m["layout"] = "row-major";
  m["column_order"] = "field-major: column j*dk + r is entry r of field j";
  m["files"] = {{"pre_filter", "knowledge_pre.f32"}, {"post_filter", "knowledge_post.f32"}};
  std::vector<std::string> names;
  for (const auto& f : pack.fields()) names.push_back(f.name());
  m["fields"] = names;
  m["dk"] = dk;
  m["split"] = cfg.eval_split;
  m["sample_ids"] = ids;
  m["gate_weights"] = has_gate ? ordered_json("gate_weights.tsv") : ordered_json(nullptr);
  m["attention"] = has_esa ? ordered_json("attention.tsv") : ordered_json(nullptr);
  if (has_gate && !rows.empty()) {
    ordered_json means = ordered_json::object();
    for (int j = 0; j < L; ++j) means[names[static_cast<std::size_t>(j)]] = gates.middleCols(j * C, C).mean();
    m["mean_gate_weight"] = means;
  }
  write_json(out / "manifest.json", m);
}

}  // namespace kser
