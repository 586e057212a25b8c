#include "deudf/field_model.hpp"
#include "deudf/training.hpp"

#include <benchmark/benchmark.h>

#include <vector>

namespace deudf {

namespace {

std::vector<int> dims_for(benchmark::State& state) {
  const int width = static_cast<int>(state.range(0));
  return {3, width, width, width, width, width, 1};
}

std::vector<Vec3> points(std::size_t n) {
  Rng rng(1);
  return sample_domain(n, rng);
}

LossBatch batch(std::size_t n) {
  Rng rng(2);
  PointCloud cloud;
  std::vector<Vec3> normals;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 u = random_unit_vector(rng);
    cloud.points.push_back(0.5 * u);
    normals.push_back(u);
  }
  cloud.normals = std::move(normals);
  LossBatch b;
  b.surface = cloud.points;
  b.pairs = sample_pairs(cloud, n, rng);
  b.domain = sample_domain(n, rng);
  return b;
}

}  // namespace

static void BM_FieldValues(benchmark::State& state) {
  const auto params = init_siren(dims_for(state), 60.0, 0);
  const SirenField field(params);
  const auto pts = points(4096);
  std::vector<double> out(pts.size());
  for ([[maybe_unused]] auto _ : state) {
    field.values(pts, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(pts.size()));
}

static void BM_FieldValuesAndGradients(benchmark::State& state) {
  const auto params = init_siren(dims_for(state), 60.0, 0);
  const SirenField field(params);
  const auto pts = points(4096);
  std::vector<double> out(pts.size());
  std::vector<Vec3> grads(pts.size());
  for ([[maybe_unused]] auto _ : state) {
    field.values_and_gradients(pts, out, grads);
    benchmark::DoNotOptimize(grads.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(pts.size()));
}

static void BM_LossParameterGradient(benchmark::State& state) {
  const auto params = init_siren(dims_for(state), 60.0, 0);
  const auto b = batch(500);
  const ObjectiveSettings settings;
  for ([[maybe_unused]] auto _ : state) {
    auto r = loss_parameter_gradient(params, b, settings);
    benchmark::DoNotOptimize(r.terms.total);
  }
}

BENCHMARK(BM_FieldValues)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_FieldValuesAndGradients)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_LossParameterGradient)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

}  // namespace deudf

BENCHMARK_MAIN();
