#include <benchmark/benchmark.h>

#include <random>

#include "mbflow/dbscan.hpp"
#include "mbflow/losses.hpp"
#include "mbflow/neural_prior.hpp"
#include "mbflow/runtime.hpp"
#include "mbflow/spatial_index.hpp"
#include "mbflow/synth.hpp"

namespace {

using namespace mbflow;

const bool kTuned = (tune_allocator(), true);

Points cloud(Index n, std::uint64_t seed, double extent = 20.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-extent, extent);
  Points P(n, 3);
  for (Index i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) P(i, c) = u(rng);
  }
  return P;
}

void BM_IndexBuild(benchmark::State& state) {
  const PointCloud P(cloud(state.range(0), 1));
  for (auto _ : state) benchmark::DoNotOptimize(build_index(P));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_IndexBuild)->RangeMultiplier(4)->Range(1024, 65536)->Complexity(benchmark::oNLogN);

void BM_NearestQueries(benchmark::State& state) {
  const PointCloud P(cloud(state.range(0), 2));
  const SpatialIndex index = build_index(P);
  const Points Q = cloud(1024, 3);
  for (auto _ : state) {
    for (Index i = 0; i < Q.rows(); ++i) benchmark::DoNotOptimize(index.nearest(Q.row(i).transpose()));
  }
  state.SetItemsProcessed(state.iterations() * Q.rows());
}
BENCHMARK(BM_NearestQueries)->RangeMultiplier(4)->Range(1024, 65536);

void BM_Dbscan(benchmark::State& state) {
  SceneSpec spec;
  spec.points_per_body = static_cast<int>(state.range(0));
  spec.background_points = static_cast<int>(state.range(0));
  const SyntheticScene scene = generate(spec);
  for (auto _ : state) benchmark::DoNotOptimize(dbscan(scene.frames[0]));
  state.SetItemsProcessed(state.iterations() * scene.frames[0].size());
}
BENCHMARK(BM_Dbscan)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);

void BM_AdjacencyAndScore(benchmark::State& state) {
  const Index n = state.range(0);
  const Points C = cloud(n, 4, 2.0);
  const Points F = cloud(n, 5, 0.01);
  for (auto _ : state) {
    const ConsistencyGraph g = adjacency(C, F, 0.03);
    benchmark::DoNotOptimize(spectral_score(g.A, 10));
  }
  state.SetComplexityN(n);
}
BENCHMARK(BM_AdjacencyAndScore)->RangeMultiplier(2)->Range(128, 2048)->Complexity(benchmark::oNSquared);

void BM_MultiBodyGradient(benchmark::State& state) {
  const Index n = state.range(0);
  const PointCloud P(cloud(n, 6, 2.0));
  std::vector<int> labels(static_cast<std::size_t>(n), 0);
  MultiBodyConfig cfg;
  const MultiBodyRegularizer reg(P, clusters_from_labels(labels), cfg);
  const Points F = cloud(n, 7, 0.01);
  for (auto _ : state) {
    ad::Tape tape;
    const ad::Var flow = tape.variable(F);
    const ad::Var loss = reg.evaluate(flow);
    tape.backward(loss);
    benchmark::DoNotOptimize(tape.grad(flow));
  }
}
BENCHMARK(BM_MultiBodyGradient)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);

void BM_MlpForward(benchmark::State& state) {
  const NeuralPrior net = NeuralPrior::Init(MlpArchitecture{}, 1);
  const Points P = cloud(state.range(0), 8);
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(P));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_MlpForward)->Arg(1024)->Arg(8192)->Unit(benchmark::kMillisecond);

void BM_ObjectiveWithGradient(benchmark::State& state) {
  const Index n = state.range(0);
  const PointCloud P1(cloud(n, 9));
  const PointCloud P2(cloud(n, 10));
  const NeuralPrior net = NeuralPrior::Init(MlpArchitecture{}, 2);
  const SceneFlowObjective objective(P1, P2, ChamferConfig{}, 0.0, nullptr);
  for (auto _ : state) benchmark::DoNotOptimize(objective.evaluate(net));
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_ObjectiveWithGradient)->Arg(1024)->Arg(8192)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
