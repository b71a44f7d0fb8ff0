#pragma once

// Embedding-space alignment. Each filtered knowledge field is refined by a
// Dense-ReLU-Dense map, cut into C_k chunks and used as keys/values of a
// cross-attention whose C_x queries come from the recommender's feature
// embeddings. The L per-field outputs are stacked row-wise and fused by
// multi-head self-attention, then flattened (and optionally projected).

#include "kser/autograd.hpp"
#include "kser/nn.hpp"

#include <span>
#include <string>
#include <vector>

namespace kser {

enum class QueryStrategy {
  /// Masked mean of history item embeddings concatenated with the target item embedding.
  HistoryItem,
  /// The full feature embedding E(x).
  FullFeature,
};

QueryStrategy parse_query_strategy(const std::string& s);
std::string to_string(QueryStrategy q);

struct EsaConfig {
  int c_x = 4;
  int c_k = 4;
  int n = 16;
  int m = 16;
  int heads = 2;
  QueryStrategy query = QueryStrategy::HistoryItem;
  bool scaled_attention = false;
  /// 0 selects d_k for both refine widths.
  int refine_hidden = 0;
  int refine_out = 0;
  bool output_proj = true;
  /// 0 selects d_e / 2.
  int output_width = 0;
};

struct EsaFieldParams {
  Dense refine_in;
  Dense refine_out;
  Parameter w_q;  // d_x x n
  Parameter w_k;  // d_k'/C_k x n
  Parameter w_v;  // d_k'/C_k x m

  void collect(std::vector<Parameter*>& out);
};

struct FusionParams {
  Parameter w_q;  // m x m
  Parameter w_k;
  Parameter w_v;
  Parameter w_o;
  int heads = 1;

  void collect(std::vector<Parameter*>& out);
};

double attention_scale(bool scaled, long key_width);

class Esa {
 public:
  Esa() = default;
  Esa(int dk, int num_fields, int query_width, int feat_width, const EsaConfig& cfg, Rng& rng);

  struct Output {
    Var out;   // B x output_width()
    Var flat;  // B x (L*C_x*m), vec(o_i) row-major
    /// Per field: (B*C_x) x C_k cross-attention scores.
    std::vector<Mat> cross_scores;
    /// (B*heads*L*C_x) x (L*C_x) self-attention scores.
    Mat fusion_scores;
  };

  /// kbar: B x (L*d_k) filtered knowledge; query: B x query width.
  Output forward(Graph& g, Var kbar, Var query);

  int flat_width() const { return num_fields_ * cfg_.c_x * cfg_.m; }
  int output_width() const;
  const EsaConfig& config() const { return cfg_; }
  int query_width() const { return query_width_; }
  std::vector<EsaFieldParams>& fields() { return fields_; }
  FusionParams& fusion() { return fusion_; }
  Dense& projection() { return proj_; }

  void collect(std::vector<Parameter*>& out);

 private:
  EsaConfig cfg_;
  int dk_ = 0;
  int num_fields_ = 0;
  int query_width_ = 0;
  std::vector<EsaFieldParams> fields_;
  FusionParams fusion_;
  Dense proj_;
};

// ---- graph-level building blocks -------------------------------------------------

Var refine_field(Graph& g, Var kbar_j, EsaFieldParams& p);
/// B x w -> (B*chunks) x (w/chunks); row r of a sample is slice r.
Var stack_chunks(Var v, long chunks);
Var cross_attend(Graph& g, Var x_stacked, Var k_stacked, EsaFieldParams& p, long c_x, long c_k,
                 double scale, Mat* scores);
/// Per-field (B*C_x) x m outputs -> fused (B*L*C_x) x m.
Var fuse_fields(Graph& g, std::span<const Var> per_field, FusionParams& p, long c_x, bool scaled,
                Mat* scores);

// ---- single-sample forms -----------------------------------------------------------

std::vector<double> refine_field(std::span<const double> kbar_j, EsaFieldParams& p);

/// Rows are consecutive slices of v. Throws unless chunks divides |v|.
Mat stack_chunks(std::span<const double> v, long chunks);

/// history: H x w embeddings, mask marks non-pad rows. HistoryItem returns
/// [masked mean | item]; FullFeature returns `full_feature` verbatim.
std::vector<double> build_query(const Mat& history, std::span<const std::uint8_t> mask,
                                std::span<const double> item, QueryStrategy strategy,
                                std::span<const double> full_feature = {});

struct CrossAttention {
  Mat output;  // C_x x m
  Mat scores;  // C_x x C_k
};

CrossAttention cross_attend(const Mat& x_stacked, const Mat& k_stacked, EsaFieldParams& p, bool scaled);

struct FusedKnowledge {
  Mat fused;                 // (L*C_x) x m
  std::vector<double> flat;  // row-major vec of fused
};

FusedKnowledge fuse_fields(const std::vector<Mat>& per_field, FusionParams& p, bool scaled);

}  // namespace kser
