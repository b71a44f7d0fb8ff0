#pragma once

// Shared helpers for the unit tests: small synthetic training sets and a
// central-difference gradient checker.

#include "kser/autograd.hpp"
#include "kser/experiments.hpp"
#include "kser/rng.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace kser::test {

inline SyntheticSpec tiny_spec() {
  SyntheticSpec s;
  s.n_samples = 400;
  s.n_users = 20;
  s.n_items = 60;
  s.n_channels = 2;
  s.muted_channels = 0;
  s.num_fields = 2;
  s.dk = 8;
  s.chunks = 2;
  return s;
}

inline ModelConfig tiny_model(BackboneKind kind = BackboneKind::Mlp) {
  ModelConfig m;
  m.backbone.kind = kind;
  m.backbone.hidden = {8, 4};
  m.backbone.din_attention_hidden = 4;
  m.field_width = 4;
  m.esfnet.chunks = 2;
  m.esa.c_x = 2;
  m.esa.c_k = 2;
  m.esa.n = 4;
  m.esa.m = 4;
  m.esa.heads = 2;
  return m;
}

/// Splits, histories and knowledge of a generated dataset, encoded.
inline TrainingData make_data(const SyntheticSpec& spec, std::uint64_t seed, int field_width, std::size_t h_max = 5,
                              std::size_t min_count = 1) {
  ExperimentConfig cfg;
  cfg.dataset.kind = "synthetic";
  cfg.dataset.synthetic = spec;
  cfg.dataset.synthetic_seed = seed;
  cfg.dataset.h_max = h_max;
  const LoadedData d = load_dataset(cfg);
  return prepare_training_data(d.splits, field_width, &*d.pack, MissingKeyPolicy::ZeroFill, nullptr, min_count);
}

inline Batch first_rows(const SplitData& split, std::size_t n) {
  std::vector<std::size_t> rows(std::min(n, split.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return make_batch(split, rows);
}

inline Mat random_mat(long r, long c, Rng& rng, double scale = 1.0) {
  Mat m(r, c);
  for (long i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

/// Relative error |a - n| / max(|a|, |n|, floor).
inline double relative_error(double a, double n, double floor = 1e-4) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

/// Worst relative error between analytic and central-difference gradients of
/// the scalar `loss` with respect to (a strided subset of) `params`.
inline double gradient_error(const std::vector<Parameter*>& params, const std::function<Var(Graph&)>& loss,
                             long max_entries_per_param = 24, double h = 1e-6) {
  for (Parameter* p : params) p->zero_grad();
  {
    Graph g;
    g.backward(loss(g));
  }
  auto eval = [&] {
    Graph g;
    return loss(g).value()(0, 0);
  };
  double worst = 0.0;
  for (Parameter* p : params) {
    const Mat analytic = p->grad;
    const long n = p->value.size();
    const long stride = std::max<long>(1, n / max_entries_per_param);
    for (long i = 0; i < n; i += stride) {
      if (p->pad_row && i < p->value.cols()) continue;
      double& v = p->value.data()[i];
      const double saved = v;
      v = saved + h;
      const double up = eval();
      v = saved - h;
      const double down = eval();
      v = saved;
      worst = std::max(worst, relative_error(analytic.data()[i], (up - down) / (2 * h)));
    }
  }
  for (Parameter* p : params) p->zero_grad();
  return worst;
}

/// Scalar loss sum(out .* weights) with fixed random weights.
inline Var weighted_sum(Var out, const Mat& weights) {
  Graph& g = out.graph();
  return sum_all(mul(out, g.constant(weights)));
}

/// Fresh temporary directory, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("kser_" + tag + "_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace kser::test
