#include <gtest/gtest.h>

#include "deudf/error.hpp"
#include "deudf/extraction.hpp"
#include "support/fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

using deudf::ErrorCode;
using deudf::ScalarGrid;
using deudf::TriangleMesh;
using deudf::Vec3;
using deudf::testing::SphereSdf;
using deudf::testing::SphereUdf;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const deudf::Error& e) {
    return e.code();
  }
  return ErrorCode::Validation;
}

class ConstantField final : public deudf::Field {
 public:
  explicit ConstantField(double c) : c_(c) {}
  void values(std::span<const Vec3> pts, std::span<double> out) const override {
    std::fill(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(pts.size()), c_);
  }
  void values_and_gradients(std::span<const Vec3> pts, std::span<double> v,
                            std::span<Vec3> g) const override {
    values(pts, v);
    std::fill(g.begin(), g.begin() + static_cast<std::ptrdiff_t>(pts.size()), Vec3::Zero());
  }

 private:
  double c_;
};

// |z|
class PlaneUdf final : public deudf::Field {
 public:
  void values(std::span<const Vec3> pts, std::span<double> out) const override {
    for (std::size_t i = 0; i < pts.size(); ++i) out[i] = std::abs(pts[i].z());
  }
  void values_and_gradients(std::span<const Vec3> pts, std::span<double> v,
                            std::span<Vec3> g) const override {
    for (std::size_t i = 0; i < pts.size(); ++i) {
      v[i] = std::abs(pts[i].z());
      g[i] = Vec3(0, 0, pts[i].z() < 0 ? -1.0 : 1.0);
    }
  }
};

// Distance to the open upper hemisphere of radius r (rim on the z = 0 circle).
class HemisphereUdf final : public deudf::Field {
 public:
  explicit HemisphereUdf(double r) : r_(r) {}
  void values(std::span<const Vec3> pts, std::span<double> out) const override {
    for (std::size_t i = 0; i < pts.size(); ++i) out[i] = eval(pts[i]).first;
  }
  void values_and_gradients(std::span<const Vec3> pts, std::span<double> v,
                            std::span<Vec3> g) const override {
    for (std::size_t i = 0; i < pts.size(); ++i) std::tie(v[i], g[i]) = eval(pts[i]);
  }

 private:
  std::pair<double, Vec3> eval(const Vec3& p) const {
    if (p.z() >= 0.0) {
      const double n = p.norm();
      const Vec3 dir = n > 0 ? Vec3(p / n) : Vec3::UnitZ();
      return {std::abs(n - r_), (n >= r_ ? 1.0 : -1.0) * dir};
    }
    const double rho = std::hypot(p.x(), p.y());
    const Vec3 radial = rho > 0 ? Vec3(p.x() / rho, p.y() / rho, 0) : Vec3::UnitX();
    const Vec3 rim = r_ * radial;
    const Vec3 d = p - rim;
    const double dist = d.norm();
    return {dist, dist > 0 ? Vec3(d / dist) : Vec3::UnitZ()};
  }
  double r_;
};

std::vector<double> radii(const TriangleMesh& m) {
  std::vector<double> r;
  for (const auto& v : m.vertices) r.push_back(v.norm());
  return r;
}

void expect_valid(const TriangleMesh& m) {
  for (const auto& t : m.triangles) {
    for (auto i : t) ASSERT_LT(i, m.vertices.size());
    EXPECT_NE(t[0], t[1]);
    EXPECT_NE(t[1], t[2]);
    EXPECT_NE(t[0], t[2]);
  }
}

TriangleMesh single_triangle() {
  TriangleMesh m;
  m.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)};
  m.triangles = {{0, 1, 2}};
  return m;
}

TriangleMesh tetrahedron() {
  TriangleMesh m;
  m.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)};
  m.triangles = {{0, 2, 1}, {0, 1, 3}, {0, 3, 2}, {1, 2, 3}};
  return m;
}

}  // namespace

TEST(evaluate_grid, lattice_layout) {
  const SphereUdf field(0.5);
  const ScalarGrid g = deudf::evaluate_grid(field, 8);
  ASSERT_EQ(g.values.size(), 512u);
  EXPECT_EQ(g.point(0, 0, 0), Vec3(-1, -1, -1));
  EXPECT_NEAR(g.spacing * 7, 2.0, 1e-12);
  EXPECT_TRUE(g.point(7, 7, 7).isApprox(Vec3(1, 1, 1)));
  EXPECT_EQ(g.at(2, 5, 3), std::abs(g.point(2, 5, 3).norm() - 0.5));
  EXPECT_EQ(g.index(1, 0, 0), 1u);
  EXPECT_EQ(g.index(0, 1, 0), 8u);
  EXPECT_EQ(g.index(0, 0, 1), 64u);
}

TEST(evaluate_grid, threads_are_bitwise_identical) {
  const auto p = deudf::init_siren({3, 16, 16, 1}, 30.0, 3);
  const deudf::SirenField field(p, 100);
  const auto a = deudf::evaluate_grid(field, 20, 1);
  const auto b = deudf::evaluate_grid(field, 20, 4);
  EXPECT_EQ(a.values, b.values);
}

TEST(evaluate_grid, minimum_near_shell) {
  const SphereUdf field(0.5);
  const auto g = deudf::evaluate_grid(field, 65);
  EXPECT_LT(*std::min_element(g.values.begin(), g.values.end()), g.spacing);
}

TEST(evaluate_grid, rejects_small_resolution) {
  const SphereUdf field(0.5);
  EXPECT_EQ(code_of([&] { deudf::evaluate_grid(field, 7); }), ErrorCode::Validation);
}

TEST(marching_cubes, constant_grid_is_empty) {
  const ConstantField field(1.0);
  EXPECT_TRUE(deudf::marching_cubes(deudf::evaluate_grid(field, 16), 0.005).empty());
}

TEST(marching_cubes, sdf_sphere_oracle) {
  const SphereSdf field(0.5);
  const auto grid = deudf::evaluate_grid(field, 128);
  const auto mesh = deudf::marching_cubes(grid, 0.0);
  ASSERT_FALSE(mesh.empty());
  expect_valid(mesh);
  for (double r : radii(mesh)) {
    EXPECT_GE(r, 0.5 - grid.spacing);
    EXPECT_LE(r, 0.5 + grid.spacing);
  }
  EXPECT_TRUE(deudf::boundary_edges(mesh).empty());
  EXPECT_EQ(deudf::connected_components(mesh), 1u);
}

TEST(marching_cubes, faces_point_toward_increasing_field) {
  const SphereSdf field(0.5);
  const auto mesh = deudf::marching_cubes(deudf::evaluate_grid(field, 32), 0.0);
  for (const auto& t : mesh.triangles) {
    const Vec3& a = mesh.vertices[t[0]];
    const Vec3& b = mesh.vertices[t[1]];
    const Vec3& c = mesh.vertices[t[2]];
    EXPECT_GT((b - a).cross(c - a).dot(a + b + c), 0.0);
  }
}

TEST(marching_cubes, shared_edges_are_merged) {
  const SphereSdf field(0.4);
  const auto mesh = deudf::marching_cubes(deudf::evaluate_grid(field, 24), 0.0);
  std::set<std::array<double, 3>> unique;
  for (const auto& v : mesh.vertices) unique.insert({v.x(), v.y(), v.z()});
  EXPECT_EQ(unique.size(), mesh.vertices.size());
  // Closed genus-0 surface: V - E + F = 2.
  const auto v = static_cast<long>(mesh.vertices.size());
  const auto f = static_cast<long>(mesh.triangles.size());
  EXPECT_EQ(v - 3 * f / 2 + f, 2);
}

TEST(marching_cubes, udf_double_cover) {
  const SphereUdf field(0.5);
  const auto grid = deudf::evaluate_grid(field, 128);
  const auto mesh = deudf::marching_cubes(grid, 0.01);
  expect_valid(mesh);
  std::size_t inner = 0, outer = 0;
  for (double r : radii(mesh)) {
    if (std::abs(r - 0.49) <= grid.spacing) {
      ++inner;
    } else if (std::abs(r - 0.51) <= grid.spacing) {
      ++outer;
    } else {
      ADD_FAILURE() << "radius " << r;
    }
  }
  EXPECT_GT(inner, 1000u);
  EXPECT_GT(outer, 1000u);
}

TEST(marching_cubes, deterministic) {
  const SphereUdf field(0.3);
  const auto grid = deudf::evaluate_grid(field, 40);
  const auto a = deudf::marching_cubes(grid, 0.02);
  const auto b = deudf::marching_cubes(grid, 0.02);
  EXPECT_EQ(a.vertices, b.vertices);
  EXPECT_EQ(a.triangles, b.triangles);
}

TEST(shrink, fixed_point_on_zero_set) {
  const PlaneUdf field;
  TriangleMesh m;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) m.vertices.emplace_back(0.1 * i, 0.1 * j, 0.0);
  for (std::uint32_t i = 0; i < 3; ++i) {
    for (std::uint32_t j = 0; j < 3; ++j) {
      const std::uint32_t a = 4 * i + j;
      m.triangles.push_back({a, a + 4, a + 1});
      m.triangles.push_back({a + 1, a + 4, a + 5});
    }
  }
  deudf::ShrinkConfig config;
  config.alpha_smooth = 0.0;
  const auto out = deudf::shrink_to_minimum(m, field, config);
  EXPECT_EQ(out.vertices, m.vertices);
}

TEST(shrink, collapses_double_cover) {
  const SphereUdf field(0.5);
  const auto mc = deudf::marching_cubes(deudf::evaluate_grid(field, 128), 0.01);
  deudf::ShrinkReport report;
  const auto out = deudf::shrink_to_minimum(mc, field, {}, &report);
  std::size_t close = 0;
  for (double r : radii(out)) close += std::abs(r - 0.5) <= 2e-3 ? 1 : 0;
  EXPECT_GE(static_cast<double>(close), 0.99 * static_cast<double>(out.vertices.size()));
  EXPECT_LT(report.mean_abs_after, report.mean_abs_before);
  EXPECT_EQ(out.triangles, mc.triangles);
}

TEST(shrink, step_bound) {
  const SphereUdf field(0.5);
  const auto mc = deudf::marching_cubes(deudf::evaluate_grid(field, 48), 0.05);
  deudf::ShrinkConfig config;
  config.iterations = 7;
  config.step_size = 2e-3;
  const auto out = deudf::shrink_to_minimum(mc, field, config);
  for (std::size_t v = 0; v < mc.vertices.size(); ++v) {
    // |grad f| = 1 everywhere for this field.
    EXPECT_LE((out.vertices[v] - mc.vertices[v]).norm(), 7 * 2e-3 * (1 + 1e-12));
  }
}

TEST(shrink, returns_best_iterate) {
  const SphereUdf field(0.5);
  const auto mc = deudf::marching_cubes(deudf::evaluate_grid(field, 48), 0.03);
  deudf::ShrinkReport report;
  deudf::shrink_to_minimum(mc, field, {}, &report);
  ASSERT_FALSE(report.mean_abs_history.empty());
  EXPECT_EQ(report.mean_abs_after,
            *std::min_element(report.mean_abs_history.begin(), report.mean_abs_history.end()));
  EXPECT_EQ(report.mean_abs_before, report.mean_abs_history.front());
}

TEST(shrink, empty_mesh) {
  const SphereUdf field(0.5);
  EXPECT_EQ(code_of([&] { deudf::shrink_to_minimum(TriangleMesh{}, field); }), ErrorCode::EmptyMesh);
}

TEST(extract_surface, closed_udf_stays_closed) {
  const SphereUdf field(0.5);
  deudf::ExtractConfig config;
  config.resolution = 128;
  config.iso = 0.02;
  const auto mesh = deudf::extract_surface(field, config);
  ASSERT_FALSE(mesh.empty());
  expect_valid(mesh);
  EXPECT_EQ(deudf::boundary_loop_count(mesh), 0u);
  double mean = 0;
  for (double r : radii(mesh)) mean += r;
  EXPECT_NEAR(mean / static_cast<double>(mesh.vertices.size()), 0.5, 0.005);
}

TEST(extract_surface, open_sheet_keeps_boundary) {
  const HemisphereUdf field(0.5);
  deudf::ExtractConfig config;
  config.resolution = 64;
  config.iso = 0.02;
  const auto mesh = deudf::extract_surface(field, config);
  ASSERT_FALSE(mesh.empty());
  EXPECT_GE(deudf::boundary_loop_count(mesh), 1u);
  for (const auto& v : mesh.vertices) EXPECT_GT(v.z(), -0.05);

  config.trim.enabled = false;
  const auto untrimmed = deudf::extract_surface(field, config);
  EXPECT_EQ(deudf::boundary_loop_count(untrimmed), 0u);
}

TEST(extract_surface, iso_above_grid_max) {
  const SphereUdf field(0.5);
  deudf::ExtractConfig config;
  config.resolution = 16;
  config.iso = 10.0;
  EXPECT_EQ(code_of([&] { deudf::extract_surface(field, config); }), ErrorCode::EmptyLevelSet);
}

TEST(topology, boundary_loops) {
  EXPECT_EQ(deudf::boundary_loop_count(single_triangle()), 1u);
  EXPECT_EQ(deudf::boundary_edges(single_triangle()).size(), 3u);
  EXPECT_EQ(deudf::boundary_loop_count(tetrahedron()), 0u);
  TriangleMesh two = single_triangle();
  for (int i = 0; i < 3; ++i) two.vertices.push_back(two.vertices[i] + Vec3(5, 0, 0));
  two.triangles.push_back({3, 4, 5});
  EXPECT_EQ(deudf::boundary_loop_count(two), 2u);
  EXPECT_EQ(deudf::connected_components(two), 2u);
  EXPECT_EQ(deudf::connected_components(tetrahedron()), 1u);
}

TEST(topology, remove_unreferenced_vertices) {
  TriangleMesh m = single_triangle();
  m.vertices.insert(m.vertices.begin(), Vec3(9, 9, 9));
  for (auto& i : m.triangles[0]) ++i;
  const auto out = deudf::remove_unreferenced_vertices(m);
  EXPECT_EQ(out.vertices.size(), 3u);
  EXPECT_EQ(out.vertices, single_triangle().vertices);
}
