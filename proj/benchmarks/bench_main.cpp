#include <benchmark/benchmark.h>

#include <vector>

#include "towl/data.hpp"
#include "towl/graph.hpp"
#include "towl/train.hpp"
#include "towl/unroll.hpp"

using namespace towl;

namespace {

OpenWorldDataset bench_dataset(std::size_t n, std::size_t d_feat) {
  BlobsConfig bc;
  bc.n_per_class = n / 5;
  bc.d_feat = d_feat;
  Rng rng(1);
  const OpenWorldDataset raw = make_blobs(bc, rng);
  return assemble_dataset(RawDataset{raw.modalities, raw.labels}, raw.known_classes, 1,
                          GraphConfig{});
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  const Mat a = rng.normal_matrix(n, n);
  const Mat b = rng.normal_matrix(n, 4);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Matmul)->RangeMultiplier(2)->Range(128, 1024)->Complexity(benchmark::oNSquared);

void BM_KnnGraph(benchmark::State& state) {
  const OpenWorldDataset ds = bench_dataset(static_cast<std::size_t>(state.range(0)), 64);
  for (auto _ : state) benchmark::DoNotOptimize(build_graph(GraphKind::Laplacian, ds.modalities[0], 10));
}
BENCHMARK(BM_KnnGraph)->Arg(250)->Arg(500);

void BM_ModelForward(benchmark::State& state) {
  const OpenWorldDataset ds = bench_dataset(static_cast<std::size_t>(state.range(0)), 256);
  const UnrolledModel m = build_model(ds, ModelSpec{}, 1, false);
  for (auto _ : state) benchmark::DoNotOptimize(model_forward(m, ds.modalities));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_ModelForward)->RangeMultiplier(2)->Range(128, 1024)->Complexity();

void BM_TrainEpoch(benchmark::State& state) {
  const OpenWorldDataset ds = bench_dataset(static_cast<std::size_t>(state.range(0)), 256);
  UnrolledModel m = build_model(ds, ModelSpec{}, 1, false);
  TrainConfig cfg;
  Optimizer opt(cfg, m);
  const TrainingBatch batch = make_batch(ds);
  std::size_t epoch = 0;
  for (auto _ : state) benchmark::DoNotOptimize(train_epoch(m, opt, ds, batch, cfg, ++epoch));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_TrainEpoch)->RangeMultiplier(2)->Range(128, 1024)->Complexity();

}  // namespace
BENCHMARK_MAIN();
