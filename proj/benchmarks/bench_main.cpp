#include <benchmark/benchmark.h>

#include <numeric>

#include "dmoe/expert.hpp"
#include "dmoe/fusion.hpp"
#include "dmoe/ontology.hpp"
#include "dmoe/taskgroups.hpp"

namespace {

using namespace dmoe;

struct Fixture {
  SyntheticData data = generate_synthetic(SynthSpec{});
  GroupingPlan plan;
  std::vector<ExpertModel> experts;
  Matrix inputs;

  Fixture() {
    std::vector<ClassId> order(static_cast<std::size_t>(data.dataset.num_classes));
    std::iota(order.begin(), order.end(), 0);
    plan = generate_groups(order, 10, 0.5);
    Rng rng(3);
    for (const auto& g : plan.groups) {
      auto e = make_expert(g, data.dataset.dim, BackboneSpec{}, rng);
      e.v.setRandom();
      e.w0.setRandom();
      e.w_nig.setRandom();
      experts.push_back(std::move(e));
    }
    inputs = gather_columns(data.dataset, data.dataset.train);
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

void BM_ForwardBatch(benchmark::State& state) {
  const auto& f = fixture();
  const Matrix x = f.inputs.leftCols(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(forward_batch(f.experts.front(), x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForwardBatch)->Arg(1)->Arg(32)->Arg(256);

void BM_ExpertGradient(benchmark::State& state) {
  const auto& f = fixture();
  const auto& e = f.experts.front();
  TrainConfig cfg;
  Batch batch{f.inputs.leftCols(state.range(0)), {}};
  for (Eigen::Index i = 0; i < batch.inputs.cols(); ++i) batch.labels.push_back(static_cast<int>(i % e.num_slots()));
  const SimilarityState sim = similarity_matrix(features_by_class(f.data.dataset, Split::train, e.group.members),
                                                cfg.kernel);
  for (auto _ : state) benchmark::DoNotOptimize(gradient(e, batch, sim, cfg));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ExpertGradient)->Arg(32)->Arg(128);

void BM_StackFeatures(benchmark::State& state) {
  const auto& f = fixture();
  const auto v = state.range(0) == 0 ? StackingVariant::odds : StackingVariant::scaled;
  for (auto _ : state) benchmark::DoNotOptimize(stack_features_batch(f.experts, f.plan, f.inputs, 0.5, v));
  state.SetItemsProcessed(state.iterations() * f.inputs.cols());
}
BENCHMARK(BM_StackFeatures)->Arg(0)->Arg(1);

void BM_SpectralPartition(benchmark::State& state) {
  SynthSpec spec;
  spec.n_categories = static_cast<int>(state.range(0));
  const auto data = generate_synthetic(spec);
  const auto aff = build_semantic_matrix(data.taxonomy);
  for (auto _ : state) benchmark::DoNotOptimize(spectral_partition(aff, spec.n_categories, 7));
}
BENCHMARK(BM_SpectralPartition)->Arg(4)->Arg(8)->Arg(32);

void BM_TrainExpert(benchmark::State& state) {
  const auto& f = fixture();
  TrainConfig cfg;
  cfg.epochs = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(train_expert(f.plan.groups.front(), f.data.dataset, cfg));
}
BENCHMARK(BM_TrainExpert)->Arg(10)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
