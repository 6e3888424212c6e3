#include <random>

#include <benchmark/benchmark.h>

#include "sgdet/gcnext.hpp"
#include "sgdet/graph.hpp"
#include "sgdet/model.hpp"
#include "sgdet/sgalign.hpp"
#include "sgdet/trainer.hpp"

namespace {

using namespace sgdet;

Tensor random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(rows * cols);
  for (double& x : v) x = n(rng);
  return Tensor::from_vector({rows, cols}, v);
}

void BM_KnnEdges(benchmark::State& state) {
  const auto l = static_cast<std::size_t>(state.range(0));
  const Tensor x = random_matrix(32, l, 1);
  for (auto _ : state) benchmark::DoNotOptimize(knn_semantic_edges(x, 4));
}
BENCHMARK(BM_KnnEdges)->Arg(100)->Arg(400);

void BM_GCNeXtForward(benchmark::State& state) {
  const Tensor x = random_matrix(32, 100, 2);
  const EdgeList edges = knn_semantic_edges(x, 4);
  GCNeXtParams p = make_gcnext_params(32, 4);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(gcnext_forward(x, edges, p));
}
BENCHMARK(BM_GCNeXtForward);

void BM_AlignedProjection(benchmark::State& state) {
  const Tensor x = random_matrix(32, 100, 3);
  const auto anchors = enumerate_anchors(100, 64);
  const PlanPtr plan = make_sampling_plan(anchors, 100, 32);
  const Tensor w = random_matrix(32 * 32, 512, 4);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(aligned_projection(x, plan, w));
}
BENCHMARK(BM_AlignedProjection)->Unit(benchmark::kMillisecond);

void BM_ModelForward(benchmark::State& state) {
  ModelConfig config;
  config.input_dim = 32;
  Model model(config);
  model.initialize(0);
  const auto ctx = make_anchor_context(config, 100, 100);
  const Tensor x = random_matrix(32, 100, 5);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(x, *ctx, false));
}
BENCHMARK(BM_ModelForward)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
