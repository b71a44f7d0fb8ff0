#include "fixtures.hpp"

#include "kser/error.hpp"
#include "kser/esa.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

using namespace kser;
using namespace kser::test;

namespace {

EsaFieldParams make_field(long dk, long dx, long dkc, long n, long m, Rng& rng) {
  EsaFieldParams f;
  f.refine_in = Dense("r1", dk, dk, rng);
  f.refine_out = Dense("r2", dk, dk, rng);
  f.w_q = Parameter("wq", random_mat(dx, n, rng));
  f.w_k = Parameter("wk", random_mat(dkc, n, rng));
  f.w_v = Parameter("wv", random_mat(dkc, m, rng));
  return f;
}

FusionParams make_fusion(long m, int heads, Rng& rng) {
  FusionParams p;
  p.w_q = Parameter("fq", random_mat(m, m, rng, 0.5));
  p.w_k = Parameter("fk", random_mat(m, m, rng, 0.5));
  p.w_v = Parameter("fv", random_mat(m, m, rng));
  p.w_o = Parameter("fo", random_mat(m, m, rng));
  p.heads = heads;
  return p;
}

Mat matmul_loop(const Mat& a, const Mat& b) {
  Mat c = Mat::Zero(a.rows(), b.cols());
  for (long i = 0; i < a.rows(); ++i)
    for (long j = 0; j < b.cols(); ++j)
      for (long k = 0; k < a.cols(); ++k) c(i, j) += a(i, k) * b(k, j);
  return c;
}

/// softmax(scale * q kᵀ) row by row, with explicit loops.
Mat softmax_scores(const Mat& q, const Mat& k, double scale) {
  Mat s(q.rows(), k.rows());
  for (long i = 0; i < q.rows(); ++i) {
    double top = -INFINITY;
    for (long j = 0; j < k.rows(); ++j) {
      double d = 0;
      for (long c = 0; c < q.cols(); ++c) d += q(i, c) * k(j, c);
      s(i, j) = scale * d;
      top = std::max(top, s(i, j));
    }
    double z = 0;
    for (long j = 0; j < k.rows(); ++j) z += (s(i, j) = std::exp(s(i, j) - top));
    for (long j = 0; j < k.rows(); ++j) s(i, j) /= z;
  }
  return s;
}

Mat self_attention_oracle(const Mat& x, FusionParams& p, double scale) {
  const Mat q = matmul_loop(x, p.w_q.value), k = matmul_loop(x, p.w_k.value), v = matmul_loop(x, p.w_v.value);
  const long dh = x.cols() / p.heads;
  Mat concat(x.rows(), x.cols());
  for (int h = 0; h < p.heads; ++h) {
    const Mat probs = softmax_scores(q.middleCols(h * dh, dh), k.middleCols(h * dh, dh), scale);
    concat.middleCols(h * dh, dh) = matmul_loop(probs, v.middleCols(h * dh, dh));
  }
  return matmul_loop(concat, p.w_o.value);
}

}  // namespace

TEST(Refine, IdentityOnNonNegativeInput) {
  Rng rng(1);
  EsaFieldParams f = make_field(3, 1, 1, 1, 1, rng);
  f.refine_in.weight.value = Mat::Identity(3, 3);
  f.refine_in.bias.value.setZero();
  f.refine_out.weight.value = Mat::Identity(3, 3);
  f.refine_out.bias.value.setZero();
  EXPECT_EQ(refine_field(std::vector<double>{1, 0, 2.5}, f), (std::vector<double>{1, 0, 2.5}));
  EXPECT_EQ(refine_field(std::vector<double>{0, 0, 0}, f), (std::vector<double>{0, 0, 0}));
}

TEST(Refine, ToyParamsMatchHandForward) {
  Rng rng(2);
  EsaFieldParams f;
  f.refine_in = Dense("r1", 3, 2, rng);
  f.refine_out = Dense("r2", 2, 2, rng);
  f.refine_in.weight.value << 1, -1, 0.5, 2, -1, 0.25;
  f.refine_in.bias.value << 0.1, -0.3;
  f.refine_out.weight.value << 1, 2, -0.5, 0.75;
  f.refine_out.bias.value << 0.2, -0.1;
  const double x[3] = {1, -1, 2};
  const double h0 = std::max(0.0, x[0] * 1 + x[1] * 0.5 + x[2] * -1 + 0.1);
  const double h1 = std::max(0.0, x[0] * -1 + x[1] * 2 + x[2] * 0.25 - 0.3);
  const auto out = refine_field(std::vector<double>(x, x + 3), f);
  EXPECT_NEAR(out[0], h0 * 1 + h1 * -0.5 + 0.2, 1e-15);
  EXPECT_NEAR(out[1], h0 * 2 + h1 * 0.75 - 0.1, 1e-15);
}

TEST(StackChunks, RowsAreSlices) {
  const Mat s = stack_chunks(std::vector<double>{1, 2, 3, 4}, 2);
  ASSERT_EQ(s.rows(), 2);
  EXPECT_EQ(s(0, 0), 1);
  EXPECT_EQ(s(0, 1), 2);
  EXPECT_EQ(s(1, 0), 3);
  EXPECT_EQ(s(1, 1), 4);
  EXPECT_EQ(stack_chunks(std::vector<double>{1, 2, 3}, 1).rows(), 1);
  EXPECT_THROW(stack_chunks(std::vector<double>(6, 0.0), 4), ValidationError);
}

TEST(StackChunks, FlattenIsInverse) {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    const long c = 1 + static_cast<long>(rng.below(5)), w = 1 + static_cast<long>(rng.below(4));
    std::vector<double> v(static_cast<std::size_t>(c * w));
    for (auto& x : v) x = rng.normal();
    const Mat s = stack_chunks(v, c);
    EXPECT_EQ(std::vector<double>(s.data(), s.data() + s.size()), v);
  }
}

TEST(BuildQuery, MaskedMeanAndItem) {
  Mat h(2, 2);
  h << 1, 1, 3, 3;
  const std::vector<double> item = {5, 5};
  const std::uint8_t all[] = {1, 1}, none[] = {0, 0};
  EXPECT_EQ(build_query(h, all, item, QueryStrategy::HistoryItem), (std::vector<double>{2, 2, 5, 5}));
  EXPECT_EQ(build_query(h, none, item, QueryStrategy::HistoryItem), (std::vector<double>{0, 0, 5, 5}));
  const std::vector<double> e = {7, 8, 9};
  EXPECT_EQ(build_query(h, all, item, QueryStrategy::FullFeature, e), e);
}

TEST(CrossAttend, SingleKeyReturnsValueProjection) {
  Rng rng(4);
  EsaFieldParams f = make_field(4, 3, 4, 2, 3, rng);
  const Mat x = random_mat(1, 3, rng), k = random_mat(1, 4, rng);
  const auto out = cross_attend(x, k, f, false);
  EXPECT_EQ(out.scores(0, 0), 1.0);
  const Mat expected = k * f.w_v.value;
  for (long c = 0; c < 3; ++c) EXPECT_NEAR(out.output(0, c), expected(0, c), 1e-12);
}

TEST(CrossAttend, IdenticalKeysSplitEvenly) {
  Rng rng(5);
  EsaFieldParams f = make_field(4, 3, 4, 2, 3, rng);
  const Mat x = random_mat(2, 3, rng);
  Mat k(2, 4);
  k.row(0) = random_mat(1, 4, rng);
  k.row(1) = k.row(0);
  const auto out = cross_attend(x, k, f, false);
  EXPECT_TRUE(((out.scores.array() - 0.5).abs() < 1e-15).all());
  const Mat v = k * f.w_v.value;
  for (long r = 0; r < 2; ++r)
    for (long c = 0; c < 3; ++c) EXPECT_NEAR(out.output(r, c), v(0, c), 1e-12);
}

TEST(CrossAttend, MatchesLoopOracleAndIsRowStochastic) {
  Rng rng(6);
  for (int t = 0; t < 100; ++t) {
    const long cx = 1 + static_cast<long>(rng.below(4)), ck = 1 + static_cast<long>(rng.below(4));
    const long dx = 1 + static_cast<long>(rng.below(4)), dkc = 1 + static_cast<long>(rng.below(4));
    const long n = 1 + static_cast<long>(rng.below(4)), m = 1 + static_cast<long>(rng.below(4));
    EsaFieldParams f = make_field(4, dx, dkc, n, m, rng);
    const Mat x = random_mat(cx, dx, rng), k = random_mat(ck, dkc, rng);
    const bool scaled = t % 2 == 1;
    const auto out = cross_attend(x, k, f, scaled);
    const double scale = scaled ? 1.0 / std::sqrt(static_cast<double>(n)) : 1.0;
    const Mat probs = softmax_scores(matmul_loop(x, f.w_q.value), matmul_loop(k, f.w_k.value), scale);
    const Mat o = matmul_loop(probs, matmul_loop(k, f.w_v.value));
    ASSERT_LT((out.scores - probs).cwiseAbs().maxCoeff(), 1e-6);
    ASSERT_LT((out.output - o).cwiseAbs().maxCoeff(), 1e-6);
    for (long r = 0; r < cx; ++r) {
      ASSERT_NEAR(out.scores.row(r).sum(), 1.0, 1e-6);
      ASSERT_GE(out.scores.row(r).minCoeff(), 0.0);
    }
  }
}

TEST(CrossAttend, KeyPermutationInvariant) {
  Rng rng(7);
  for (int t = 0; t < 20; ++t) {
    EsaFieldParams f = make_field(4, 3, 2, 4, 4, rng);
    const Mat x = random_mat(3, 3, rng), k = random_mat(4, 2, rng);
    Mat kp(4, 2);
    const int perm[] = {2, 0, 3, 1};
    for (int i = 0; i < 4; ++i) kp.row(i) = k.row(perm[i]);
    EXPECT_LT((cross_attend(x, k, f, false).output - cross_attend(x, kp, f, false).output).cwiseAbs().maxCoeff(),
              1e-6);
  }
}

TEST(FuseFields, SingleRowIsValueThenOutput) {
  Rng rng(8);
  FusionParams p = make_fusion(4, 2, rng);
  const Mat o = random_mat(1, 4, rng);
  const auto fused = fuse_fields({o}, p, false);
  const Mat expected = o * p.w_v.value * p.w_o.value;
  EXPECT_LT((fused.fused - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(FuseFields, FlattenIsRowMajor) {
  Rng rng(9);
  FusionParams p = make_fusion(2, 1, rng);
  const auto fused = fuse_fields({random_mat(1, 2, rng), random_mat(1, 2, rng)}, p, false);
  ASSERT_EQ(fused.fused.rows(), 2);
  EXPECT_EQ(fused.flat, (std::vector<double>{fused.fused(0, 0), fused.fused(0, 1), fused.fused(1, 0),
                                             fused.fused(1, 1)}));
}

TEST(FuseFields, MatchesSelfAttentionOracle) {
  Rng rng(10);
  for (int t = 0; t < 100; ++t) {
    const int heads = t % 2 == 0 ? 1 : 2;
    const long m = 2 * (1 + static_cast<long>(rng.below(3)));
    const long cx = 1 + static_cast<long>(rng.below(3));
    const int l = 1 + static_cast<int>(rng.below(3));
    FusionParams p = make_fusion(m, heads, rng);
    std::vector<Mat> per_field;
    for (int j = 0; j < l; ++j) per_field.push_back(random_mat(cx, m, rng));
    Mat stacked(l * cx, m);
    for (int j = 0; j < l; ++j) stacked.middleRows(j * cx, cx) = per_field[static_cast<std::size_t>(j)];
    const bool scaled = t % 3 == 0;
    const double scale = scaled ? 1.0 / std::sqrt(static_cast<double>(m / heads)) : 1.0;
    const auto fused = fuse_fields(per_field, p, scaled);
    ASSERT_LT((fused.fused - self_attention_oracle(stacked, p, scale)).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(FuseFields, RejectsUnequalShapesAndEmpty) {
  Rng rng(11);
  FusionParams p = make_fusion(2, 1, rng);
  EXPECT_THROW(fuse_fields({}, p, false), DataError);
  EXPECT_THROW(fuse_fields({random_mat(2, 2, rng), random_mat(1, 2, rng)}, p, false), DataError);
}

TEST(EsaModule, ShapesAndStochasticScoresAcrossConfigs) {
  Rng rng(12);
  for (int cx : {1, 2, 4})
    for (int ck : {1, 2, 4})
      for (int m : {2, 4})
        for (int l : {1, 2, 3})
          for (bool proj : {false, true}) {
            EsaConfig cfg;
            cfg.c_x = cx;
            cfg.c_k = ck;
            cfg.n = 3;
            cfg.m = m;
            cfg.heads = 2;
            cfg.output_proj = proj;
            Esa esa(8, l, 8, 10, cfg, rng);
            Graph g;
            const auto out = esa.forward(g, g.constant(random_mat(3, 8 * l, rng)), g.constant(random_mat(3, 8, rng)));
            ASSERT_EQ(out.flat.cols(), l * cx * m);
            ASSERT_EQ(esa.flat_width(), l * cx * m);
            ASSERT_EQ(out.out.cols(), proj ? 5 : l * cx * m);
            for (const Mat& s : out.cross_scores) {
              ASSERT_EQ(s.cols(), ck);
              ASSERT_LT((s.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-6);
            }
            ASSERT_LT((out.fusion_scores.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-6);
          }
}

TEST(EsaGradient, FiniteDifferencesAgree) {
  Rng rng(13);
  for (bool scaled : {false, true}) {
    EsaConfig cfg;
    cfg.c_x = 2;
    cfg.c_k = 2;
    cfg.n = 3;
    cfg.m = 4;
    cfg.heads = 2;
    cfg.scaled_attention = scaled;
    Esa esa(4, 2, 4, 6, cfg, rng);
    std::vector<Parameter*> params;
    esa.collect(params);
    const Mat kb = random_mat(2, 8, rng), q = random_mat(2, 4, rng), w = random_mat(2, esa.output_width(), rng);
    const double err = gradient_error(params, [&](Graph& g) {
      return weighted_sum(esa.forward(g, g.constant(kb), g.constant(q)).out, w);
    });
    EXPECT_LT(err, 1e-4) << "scaled=" << scaled;
  }
}
