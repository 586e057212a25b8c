#include "deudf/geometry.hpp"
#include "deudf/training.hpp"

#include <benchmark/benchmark.h>

namespace deudf {

namespace {

PointCloud cloud(std::size_t n) {
  Rng rng(3);
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) c.points.push_back(0.5 * random_unit_vector(rng));
  return c;
}

}  // namespace

static void BM_BuildIndex(benchmark::State& state) {
  const auto c = cloud(static_cast<std::size_t>(state.range(0)));
  for ([[maybe_unused]] auto _ : state) {
    auto index = build_index(c.points);
    benchmark::DoNotOptimize(index.size());
  }
}

static void BM_KnnQuery(benchmark::State& state) {
  const auto c = cloud(100000);
  const auto index = build_index(c.points);
  Rng rng(4);
  std::vector<Vec3> queries;
  for (int i = 0; i < 1024; ++i) queries.push_back(0.51 * random_unit_vector(rng));
  const auto k = static_cast<std::size_t>(state.range(0));
  for ([[maybe_unused]] auto _ : state) {
    for (const Vec3& q : queries) benchmark::DoNotOptimize(knn_query(index, q, k).data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(queries.size()));
}

static void BM_EstimateNormals(benchmark::State& state) {
  const auto c = cloud(50000);
  const auto threads = static_cast<unsigned>(state.range(0));
  for ([[maybe_unused]] auto _ : state) {
    auto out = estimate_normals_pca(c, 16, nullptr, threads);
    benchmark::DoNotOptimize(out.points.data());
  }
}

BENCHMARK(BM_BuildIndex)->Arg(10000)->Arg(100000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_KnnQuery)->Arg(1)->Arg(16);
BENCHMARK(BM_EstimateNormals)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

}  // namespace deudf

BENCHMARK_MAIN();
