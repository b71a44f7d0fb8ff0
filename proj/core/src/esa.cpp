#include "kser/esa.hpp"

#include "kser/error.hpp"

#include <cmath>

namespace kser {

QueryStrategy parse_query_strategy(const std::string& s) {
  if (s == "history_item") return QueryStrategy::HistoryItem;
  if (s == "full_feature") return QueryStrategy::FullFeature;
  throw ValidationError("unknown esa.query '" + s + "' (expected history_item or full_feature)");
}

std::string to_string(QueryStrategy q) {
  return q == QueryStrategy::HistoryItem ? "history_item" : "full_feature";
}

double attention_scale(bool scaled, long key_width) {
  return scaled ? 1.0 / std::sqrt(static_cast<double>(key_width)) : 1.0;
}

void EsaFieldParams::collect(std::vector<Parameter*>& out) {
  refine_in.collect(out);
  refine_out.collect(out);
  out.push_back(&w_q);
  out.push_back(&w_k);
  out.push_back(&w_v);
}

void FusionParams::collect(std::vector<Parameter*>& out) {
  out.push_back(&w_q);
  out.push_back(&w_k);
  out.push_back(&w_v);
  out.push_back(&w_o);
}

Esa::Esa(int dk, int num_fields, int query_width, int feat_width, const EsaConfig& cfg, Rng& rng)
    : cfg_(cfg), dk_(dk), num_fields_(num_fields), query_width_(query_width) {
  const auto fail = [](const std::string& m) { throw ValidationError("esa: " + m); };
  if (num_fields < 1) fail("need at least one knowledge field");
  if (cfg.c_x < 1 || cfg.c_k < 1 || cfg.n < 1 || cfg.m < 1 || cfg.heads < 1) fail("sizes must be positive");
  if (query_width % cfg.c_x != 0)
    fail("query width " + std::to_string(query_width) + " is not divisible by c_x = " + std::to_string(cfg.c_x));
  if (cfg.m % cfg.heads != 0) fail("m must be divisible by the head count");
  const int hidden = cfg.refine_hidden > 0 ? cfg.refine_hidden : dk;
  const int refined = cfg.refine_out > 0 ? cfg.refine_out : dk;
  if (refined % cfg.c_k != 0)
    fail("refined width " + std::to_string(refined) + " is not divisible by c_k = " + std::to_string(cfg.c_k));
  const int dx = query_width / cfg.c_x;
  const int dkc = refined / cfg.c_k;

  for (int j = 0; j < num_fields; ++j) {
    const std::string p = "esa.field" + std::to_string(j);
    EsaFieldParams f;
    f.refine_in = Dense(p + ".refine1", dk, hidden, rng);
    f.refine_out = Dense(p + ".refine2", hidden, refined, rng);
    f.w_q = uniform_fan_in(p + ".w_q", dx, cfg.n, rng);
    f.w_k = uniform_fan_in(p + ".w_k", dkc, cfg.n, rng);
    f.w_v = uniform_fan_in(p + ".w_v", dkc, cfg.m, rng);
    fields_.push_back(std::move(f));
  }
  fusion_.w_q = uniform_fan_in("esa.fusion.w_q", cfg.m, cfg.m, rng);
  fusion_.w_k = uniform_fan_in("esa.fusion.w_k", cfg.m, cfg.m, rng);
  fusion_.w_v = uniform_fan_in("esa.fusion.w_v", cfg.m, cfg.m, rng);
  fusion_.w_o = uniform_fan_in("esa.fusion.w_o", cfg.m, cfg.m, rng);
  fusion_.heads = cfg.heads;
  if (cfg.output_proj) {
    const int width = cfg.output_width > 0 ? cfg.output_width : std::max(1, feat_width / 2);
    proj_ = Dense("esa.output_proj", flat_width(), width, rng);
  }
}

int Esa::output_width() const {
  return cfg_.output_proj ? static_cast<int>(proj_.out_width()) : flat_width();
}

void Esa::collect(std::vector<Parameter*>& out) {
  for (auto& f : fields_) f.collect(out);
  fusion_.collect(out);
  if (cfg_.output_proj) proj_.collect(out);
}

Esa::Output Esa::forward(Graph& g, Var kbar, Var query) {
  if (kbar.cols() != static_cast<long>(dk_) * num_fields_) throw DataError("esa knowledge width mismatch");
  if (query.cols() != query_width_) throw DataError("esa query width mismatch");
  Output out;
  const Var x_stacked = stack_chunks(query, cfg_.c_x);
  const double s = attention_scale(cfg_.scaled_attention, cfg_.n);
  std::vector<Var> per_field;
  for (int j = 0; j < num_fields_; ++j) {
    const Var refined = refine_field(g, slice_cols(kbar, static_cast<long>(j) * dk_, dk_), fields_[j]);
    Mat scores;
    per_field.push_back(cross_attend(g, x_stacked, stack_chunks(refined, cfg_.c_k), fields_[j], cfg_.c_x,
                                     cfg_.c_k, s, &scores));
    out.cross_scores.push_back(std::move(scores));
  }
  const Var fused = fuse_fields(g, per_field, fusion_, cfg_.c_x, cfg_.scaled_attention, &out.fusion_scores);
  out.flat = reshape(fused, kbar.rows(), flat_width());
  out.out = cfg_.output_proj ? proj_(g, out.flat) : out.flat;
  return out;
}

// ---- graph-level ---------------------------------------------------------------------

Var refine_field(Graph& g, Var kbar_j, EsaFieldParams& p) {
  if (kbar_j.cols() != p.refine_in.in_width()) throw DataError("refine input width mismatch");
  return p.refine_out(g, relu(p.refine_in(g, kbar_j)));
}

Var stack_chunks(Var v, long chunks) {
  if (chunks < 1 || v.cols() % chunks != 0)
    throw ValidationError("cannot stack width " + std::to_string(v.cols()) + " into " + std::to_string(chunks) +
                          " chunks");
  return reshape(v, v.rows() * chunks, v.cols() / chunks);
}

Var cross_attend(Graph& g, Var x_stacked, Var k_stacked, EsaFieldParams& p, long c_x, long c_k, double scale,
                 Mat* scores) {
  if (x_stacked.cols() != p.w_q.value.rows() || k_stacked.cols() != p.w_k.value.rows())
    throw DataError("cross-attention input width mismatch");
  const Var q = matmul(x_stacked, g.param(p.w_q));
  const Var k = matmul(k_stacked, g.param(p.w_k));
  const Var v = matmul(k_stacked, g.param(p.w_v));
  return grouped_attention(q, k, v, c_x, c_k, 1, scale, scores);
}

Var fuse_fields(Graph& g, std::span<const Var> per_field, FusionParams& p, long c_x, bool scaled, Mat* scores) {
  if (per_field.empty()) throw DataError("fusion needs at least one knowledge field");
  const long rows = per_field[0].rows(), m = per_field[0].cols();
  if (rows % c_x != 0) throw DataError("fusion input rows not a multiple of c_x");
  const long batch = rows / c_x;
  std::vector<Var> flat;
  for (const Var& o : per_field) {
    if (o.rows() != rows || o.cols() != m) throw DataError("per-field outputs have unequal shapes");
    flat.push_back(reshape(o, batch, c_x * m));
  }
  const long seq = static_cast<long>(per_field.size()) * c_x;
  const Var x = reshape(concat_cols(flat), batch * seq, m);
  const Var q = matmul(x, g.param(p.w_q));
  const Var k = matmul(x, g.param(p.w_k));
  const Var v = matmul(x, g.param(p.w_v));
  const Var a = grouped_attention(q, k, v, seq, seq, p.heads, attention_scale(scaled, m / p.heads), scores);
  return matmul(a, g.param(p.w_o));
}

// ---- single-sample ---------------------------------------------------------------------

namespace {

Mat row_of(std::span<const double> v) {
  Mat m(1, static_cast<long>(v.size()));
  std::copy(v.begin(), v.end(), m.data());
  return m;
}

}  // namespace

std::vector<double> refine_field(std::span<const double> kbar_j, EsaFieldParams& p) {
  Graph g;
  const Var out = refine_field(g, g.constant(row_of(kbar_j)), p);
  return {out.value().data(), out.value().data() + out.value().size()};
}

Mat stack_chunks(std::span<const double> v, long chunks) {
  Graph g;
  return stack_chunks(g.constant(row_of(v)), chunks).value();
}

std::vector<double> build_query(const Mat& history, std::span<const std::uint8_t> mask,
                                std::span<const double> item, QueryStrategy strategy,
                                std::span<const double> full_feature) {
  if (strategy == QueryStrategy::FullFeature) return {full_feature.begin(), full_feature.end()};
  Graph g;
  const Var mean = masked_mean_groups(g.constant(history), mask, history.rows());
  std::vector<double> q(mean.value().data(), mean.value().data() + mean.value().size());
  q.insert(q.end(), item.begin(), item.end());
  return q;
}

CrossAttention cross_attend(const Mat& x_stacked, const Mat& k_stacked, EsaFieldParams& p, bool scaled) {
  Graph g;
  CrossAttention out;
  const Var o = cross_attend(g, g.constant(x_stacked), g.constant(k_stacked), p, x_stacked.rows(),
                             k_stacked.rows(), attention_scale(scaled, p.w_q.value.cols()), &out.scores);
  out.output = o.value();
  return out;
}

FusedKnowledge fuse_fields(const std::vector<Mat>& per_field, FusionParams& p, bool scaled) {
  if (per_field.empty()) throw DataError("fusion needs at least one knowledge field");
  Graph g;
  std::vector<Var> vars;
  for (const auto& m : per_field) vars.push_back(g.constant(m));
  const Var f = fuse_fields(g, vars, p, per_field[0].rows(), scaled, nullptr);
  FusedKnowledge out;
  out.fused = f.value();
  out.flat.assign(out.fused.data(), out.fused.data() + out.fused.size());
  return out;
}

}  // namespace kser
