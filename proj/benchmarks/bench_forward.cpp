#include "kser/experiments.hpp"
#include "kser/metrics.hpp"

#include <benchmark/benchmark.h>

#include <numeric>

using namespace kser;

namespace {

const TrainingData& bench_data() {
  static const TrainingData data = [] {
    ExperimentConfig cfg = load_config("", {"dataset.synthetic.n_samples=4000", "dataset.synthetic.n_items=2000"});
    const LoadedData d = load_dataset(cfg);
    return prepare_training_data(d.splits, cfg.model.field_width, &*d.pack, cfg.knowledge.missing, nullptr,
                                 cfg.dataset.min_count);
  }();
  return data;
}

Batch bench_batch(std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  return make_batch(bench_data().train, rows);
}

void BM_ForwardBackward(benchmark::State& state) {
  const auto kind = static_cast<BackboneKind>(state.range(0));
  const bool knowledge = state.range(1) != 0;
  const TrainingData& data = bench_data();
  ModelConfig m = load_config("", {}).model;
  m.backbone.kind = kind;
  Rng rng(1);
  KserModel model = knowledge
                        ? KserModel::make_all_params(m, data.schema, data.dk, data.num_fields, Ablation::None, rng)
                        : KserModel::make_base(m, data.schema, rng);
  const Batch batch = bench_batch(256);
  for (auto _ : state) {
    Graph g;
    Var loss = bce_with_logits(model.forward(g, batch).logits, batch.labels);
    g.backward(loss);
    benchmark::DoNotOptimize(loss.value()(0, 0));
    for (Parameter* p : model.parameters()) p->zero_grad();
  }
  state.SetItemsProcessed(state.iterations() * 256);
}
BENCHMARK(BM_ForwardBackward)
    ->ArgsProduct({{static_cast<int>(BackboneKind::Mlp), static_cast<int>(BackboneKind::DeepFmLite),
                    static_cast<int>(BackboneKind::DinLite)},
                   {0, 1}})
    ->Unit(benchmark::kMillisecond);

void BM_CrossAttention(benchmark::State& state) {
  Rng rng(2);
  const long c = state.range(0);
  EsaFieldParams p;
  auto fill = [&](long r, long k) {
    Mat m(r, k);
    for (long i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
  };
  p.w_q = Parameter("q", fill(8, 16));
  p.w_k = Parameter("k", fill(8, 16));
  p.w_v = Parameter("v", fill(8, 16));
  const Mat x = fill(c, 8), k = fill(c, 8);
  for (auto _ : state) benchmark::DoNotOptimize(cross_attend(x, k, p, true).output.data());
}
BENCHMARK(BM_CrossAttention)->Arg(2)->Arg(4)->Arg(16);

void BM_Auc(benchmark::State& state) {
  Rng rng(3);
  std::vector<double> s(static_cast<std::size_t>(state.range(0))), y(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = rng.uniform();
    y[i] = static_cast<double>(i % 2);
  }
  for (auto _ : state) benchmark::DoNotOptimize(compute_auc(s, y));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Auc)->Arg(1 << 10)->Arg(1 << 16);

}  // namespace

BENCHMARK_MAIN();
