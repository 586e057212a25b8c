#include "deudf/extraction.hpp"
#include "deudf/metrics.hpp"

#include <benchmark/benchmark.h>

#include <cmath>

namespace deudf {

namespace {

class SphereUdf final : public Field {
 public:
  void values(std::span<const Vec3> pts, std::span<double> out) const override {
    for (std::size_t i = 0; i < pts.size(); ++i) out[i] = std::abs(pts[i].norm() - 0.5);
  }
  void values_and_gradients(std::span<const Vec3> pts, std::span<double> v,
                            std::span<Vec3> g) const override {
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const double r = pts[i].norm();
      v[i] = std::abs(r - 0.5);
      g[i] = (r >= 0.5 ? 1.0 : -1.0) * pts[i] / r;
    }
  }
};

}  // namespace

static void BM_MarchingCubes(benchmark::State& state) {
  const auto grid = evaluate_grid(SphereUdf{}, static_cast<int>(state.range(0)));
  for ([[maybe_unused]] auto _ : state) {
    auto mesh = marching_cubes(grid, 0.01);
    benchmark::DoNotOptimize(mesh.vertices.data());
  }
}

static void BM_ShrinkToMinimum(benchmark::State& state) {
  const auto mesh = marching_cubes(evaluate_grid(SphereUdf{}, 64), 0.02);
  ShrinkConfig config;
  config.iterations = static_cast<int>(state.range(0));
  for ([[maybe_unused]] auto _ : state) {
    auto out = shrink_to_minimum(mesh, SphereUdf{}, config);
    benchmark::DoNotOptimize(out.vertices.data());
  }
}

static void BM_ChamferL1(benchmark::State& state) {
  Rng rng(5);
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<Vec3> a, b;
  for (std::size_t i = 0; i < n; ++i) {
    a.push_back(0.5 * random_unit_vector(rng));
    b.push_back(0.501 * random_unit_vector(rng));
  }
  for ([[maybe_unused]] auto _ : state) benchmark::DoNotOptimize(chamfer_l1(a, b));
}

BENCHMARK(BM_MarchingCubes)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ShrinkToMinimum)->Arg(10)->Arg(100)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ChamferL1)->Arg(10000)->Arg(100000)->Unit(benchmark::kMillisecond);

}  // namespace deudf

BENCHMARK_MAIN();
