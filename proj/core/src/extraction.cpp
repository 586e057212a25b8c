#include "deudf/extraction.hpp"

#include "deudf/error.hpp"
#include "mc_tables.hpp"
#include "parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <unordered_map>

namespace deudf {

namespace {

constexpr int kCornerOffset[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 0, 1}, {0, 0, 1},
                                     {0, 1, 0}, {1, 1, 0}, {1, 1, 1}, {0, 1, 1}};
constexpr int kEdgeCorners[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                                     {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};

struct UnionFind {
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0u); }
  std::uint32_t find(std::uint32_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  void unite(std::uint32_t a, std::uint32_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
  std::vector<std::uint32_t> parent;
};

std::uint64_t edge_key(std::uint32_t a, std::uint32_t b) {
  if (a > b) std::swap(a, b);
  return (static_cast<std::uint64_t>(a) << 32) | b;
}

std::vector<std::vector<std::uint32_t>> one_rings(const TriangleMesh& mesh) {
  std::vector<std::vector<std::uint32_t>> rings(mesh.vertices.size());
  for (const auto& t : mesh.triangles) {
    for (int e = 0; e < 3; ++e) {
      rings[t[e]].push_back(t[(e + 1) % 3]);
      rings[t[e]].push_back(t[(e + 2) % 3]);
    }
  }
  for (auto& r : rings) {
    std::sort(r.begin(), r.end());
    r.erase(std::unique(r.begin(), r.end()), r.end());
  }
  return rings;
}

double mean_abs(const std::vector<double>& values) {
  double s = 0.0;
  for (double v : values) s += std::abs(v);
  return values.empty() ? 0.0 : s / static_cast<double>(values.size());
}

}  // namespace

ScalarGrid evaluate_grid(const Field& field, int resolution, unsigned threads) {
  if (resolution < kMinGridResolution) {
    throw Error(ErrorCode::Validation, "grid resolution must be >= " +
                                           std::to_string(kMinGridResolution) + ", got " +
                                           std::to_string(resolution));
  }
  ScalarGrid grid;
  grid.resolution = resolution;
  grid.spacing = 2.0 / (resolution - 1);
  const auto res = static_cast<std::size_t>(resolution);
  const std::size_t slab = res * res;
  grid.values.resize(slab * res);

  detail::parallel_for(res, threads, [&](std::size_t k_begin, std::size_t k_end) {
    std::vector<Vec3> points(slab);
    for (std::size_t k = k_begin; k < k_end; ++k) {
      for (int j = 0; j < resolution; ++j) {
        for (int i = 0; i < resolution; ++i) {
          points[static_cast<std::size_t>(i) + res * static_cast<std::size_t>(j)] =
              grid.point(i, j, static_cast<int>(k));
        }
      }
      field.values(points, std::span(grid.values).subspan(k * slab, slab));
    }
  });
  return grid;
}

TriangleMesh marching_cubes(const ScalarGrid& grid, double iso) {
  if (!std::isfinite(iso)) throw Error(ErrorCode::Validation, "iso value must be finite");
  TriangleMesh mesh;
  const int res = grid.resolution;
  std::unordered_map<std::uint64_t, std::uint32_t> edge_vertex;

  for (int k = 0; k + 1 < res; ++k) {
    for (int j = 0; j + 1 < res; ++j) {
      for (int i = 0; i + 1 < res; ++i) {
        double corner[8];
        int cube = 0;
        for (int c = 0; c < 8; ++c) {
          corner[c] = grid.at(i + kCornerOffset[c][0], j + kCornerOffset[c][1],
                              k + kCornerOffset[c][2]);
          if (corner[c] < iso) cube |= 1 << c;
        }
        if (detail::kEdgeTable[cube] == 0) continue;

        std::uint32_t ids[12];
        for (int e = 0; e < 12; ++e) {
          if ((detail::kEdgeTable[cube] & (1 << e)) == 0) continue;
          int a = kEdgeCorners[e][0];
          int b = kEdgeCorners[e][1];
          // Orient every lattice edge from its lower corner so shared edges agree bitwise.
          if (kCornerOffset[a][0] + kCornerOffset[a][1] + kCornerOffset[a][2] >
              kCornerOffset[b][0] + kCornerOffset[b][1] + kCornerOffset[b][2]) {
            std::swap(a, b);
          }
          const int ai = i + kCornerOffset[a][0];
          const int aj = j + kCornerOffset[a][1];
          const int ak = k + kCornerOffset[a][2];
          const int axis = kCornerOffset[b][0] != kCornerOffset[a][0]   ? 0
                           : kCornerOffset[b][1] != kCornerOffset[a][1] ? 1
                                                                        : 2;
          const std::uint64_t key = 3 * static_cast<std::uint64_t>(grid.index(ai, aj, ak)) +
                                    static_cast<std::uint64_t>(axis);
          auto [it, inserted] =
              edge_vertex.try_emplace(key, static_cast<std::uint32_t>(mesh.vertices.size()));
          if (inserted) {
            const double va = corner[a];
            const double vb = corner[b];
            const double t = std::clamp((iso - va) / (vb - va), 0.0, 1.0);
            Vec3 p = grid.point(ai, aj, ak);
            p[axis] += t * grid.spacing;
            mesh.vertices.push_back(p);
          }
          ids[e] = it->second;
        }
        for (const int* t = detail::kTriTable[cube]; *t != -1; t += 3) {
          mesh.triangles.push_back({ids[t[0]], ids[t[1]], ids[t[2]]});
        }
      }
    }
  }
  return mesh;
}

TriangleMesh shrink_to_minimum(const TriangleMesh& mesh, const Field& field,
                               const ShrinkConfig& config, ShrinkReport* report) {
  if (mesh.empty()) throw Error(ErrorCode::EmptyMesh, "cannot shrink an empty mesh");
  const auto rings = one_rings(mesh);
  const std::size_t n = mesh.vertices.size();

  TriangleMesh current = mesh;
  TriangleMesh best = mesh;
  std::vector<double> values(n);
  std::vector<Vec3> gradients(n);
  std::vector<Vec3> next(n);

  ShrinkReport local;
  double best_mean = std::numeric_limits<double>::infinity();
  double previous = std::numeric_limits<double>::infinity();
  int rising = 0;

  for (int iter = 0;; ++iter) {
    field.values_and_gradients(current.vertices, values, gradients);
    const double m = mean_abs(values);
    local.mean_abs_history.push_back(m);
    if (iter == 0) local.mean_abs_before = m;
    if (m < best_mean) {
      best_mean = m;
      best.vertices = current.vertices;
    }
    rising = m > previous ? rising + 1 : 0;
    previous = m;
    if (iter >= config.iterations || rising >= config.patience) break;
    local.iterations_run = iter + 1;

    double max_grad = 0.0;
    for (const Vec3& g : gradients) max_grad = std::max(max_grad, g.norm());
    const double cap = config.step_size * max_grad;

    for (std::size_t v = 0; v < n; ++v) {
      Vec3 descent = values[v] * gradients[v];
      if (config.alpha_smooth > 0.0 && !rings[v].empty()) {
        Vec3 centroid = Vec3::Zero();
        for (std::uint32_t u : rings[v]) centroid += current.vertices[u];
        centroid /= static_cast<double>(rings[v].size());
        descent += config.alpha_smooth * (current.vertices[v] - centroid);
      }
      const double len = descent.norm();
      if (len > cap) descent *= cap / len;
      next[v] = current.vertices[v] - descent;
    }
    std::swap(current.vertices, next);
  }

  local.mean_abs_after = best_mean;
  if (report != nullptr) *report = std::move(local);
  return best;
}

TriangleMesh trim_folds(const TriangleMesh& mesh, const Field& field, double probe,
                        double min_rise) {
  const std::size_t nt = mesh.triangles.size();
  std::vector<Vec3> samples;
  samples.reserve(3 * nt);
  std::vector<unsigned char> degenerate(nt, 0);
  for (std::size_t t = 0; t < nt; ++t) {
    const auto& tri = mesh.triangles[t];
    const Vec3& a = mesh.vertices[tri[0]];
    const Vec3& b = mesh.vertices[tri[1]];
    const Vec3& c = mesh.vertices[tri[2]];
    const Vec3 centroid = (a + b + c) / 3.0;
    Vec3 normal = (b - a).cross(c - a);
    const double len = normal.norm();
    if (!(len > 1e-300)) {
      degenerate[t] = 1;
      normal = Vec3::UnitZ();
    } else {
      normal /= len;
    }
    samples.push_back(centroid);
    samples.push_back(centroid + probe * normal);
    samples.push_back(centroid - probe * normal);
  }
  std::vector<double> values(samples.size());
  field.values(samples, values);

  TriangleMesh kept;
  kept.vertices = mesh.vertices;
  for (std::size_t t = 0; t < nt; ++t) {
    const double center = values[3 * t];
    const double threshold = min_rise * probe;
    const bool valley = values[3 * t + 1] - center >= threshold &&
                        values[3 * t + 2] - center >= threshold;
    if (valley && !degenerate[t]) kept.triangles.push_back(mesh.triangles[t]);
  }
  return remove_unreferenced_vertices(kept);
}

TriangleMesh extract_surface(const Field& field, const ExtractConfig& config,
                             ShrinkReport* report) {
  const ScalarGrid grid = evaluate_grid(field, config.resolution, config.threads);
  const auto [lo, hi] = std::minmax_element(grid.values.begin(), grid.values.end());
  TriangleMesh mesh = marching_cubes(grid, config.iso);
  if (mesh.empty()) {
    throw Error(ErrorCode::EmptyLevelSet,
                "no crossing of iso " + std::to_string(config.iso) + " (grid range [" +
                    std::to_string(*lo) + ", " + std::to_string(*hi) +
                    "]); try a larger iso value");
  }
  mesh = shrink_to_minimum(mesh, field, config.shrink, report);
  if (config.trim.enabled) {
    TriangleMesh trimmed =
        trim_folds(mesh, field, config.trim.probe_cells * grid.spacing, config.trim.min_rise);
    if (!trimmed.empty()) mesh = std::move(trimmed);
  }
  return mesh;
}

std::vector<std::array<std::uint32_t, 2>> boundary_edges(const TriangleMesh& mesh) {
  std::unordered_map<std::uint64_t, int> counts;
  counts.reserve(3 * mesh.triangles.size());
  for (const auto& t : mesh.triangles) {
    for (int e = 0; e < 3; ++e) ++counts[edge_key(t[e], t[(e + 1) % 3])];
  }
  std::vector<std::array<std::uint32_t, 2>> out;
  for (const auto& [key, count] : counts) {
    if (count == 1) {
      out.push_back({static_cast<std::uint32_t>(key >> 32),
                     static_cast<std::uint32_t>(key & 0xffffffffu)});
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::size_t boundary_loop_count(const TriangleMesh& mesh) {
  const auto edges = boundary_edges(mesh);
  if (edges.empty()) return 0;
  UnionFind uf(mesh.vertices.size());
  std::vector<unsigned char> on_boundary(mesh.vertices.size(), 0);
  for (const auto& e : edges) {
    uf.unite(e[0], e[1]);
    on_boundary[e[0]] = on_boundary[e[1]] = 1;
  }
  std::size_t loops = 0;
  for (std::uint32_t v = 0; v < mesh.vertices.size(); ++v) {
    if (on_boundary[v] && uf.find(v) == v) ++loops;
  }
  return loops;
}

std::size_t connected_components(const TriangleMesh& mesh) {
  UnionFind uf(mesh.vertices.size());
  std::vector<unsigned char> used(mesh.vertices.size(), 0);
  for (const auto& t : mesh.triangles) {
    uf.unite(t[0], t[1]);
    uf.unite(t[1], t[2]);
    used[t[0]] = used[t[1]] = used[t[2]] = 1;
  }
  std::size_t count = 0;
  for (std::uint32_t v = 0; v < mesh.vertices.size(); ++v) {
    if (used[v] && uf.find(v) == v) ++count;
  }
  return count;
}

TriangleMesh remove_unreferenced_vertices(const TriangleMesh& mesh) {
  constexpr auto kUnused = std::numeric_limits<std::uint32_t>::max();
  std::vector<std::uint32_t> remap(mesh.vertices.size(), kUnused);
  TriangleMesh out;
  out.triangles.reserve(mesh.triangles.size());
  for (const auto& t : mesh.triangles) {
    std::array<std::uint32_t, 3> mapped{};
    for (int c = 0; c < 3; ++c) {
      if (remap[t[c]] == kUnused) {
        remap[t[c]] = static_cast<std::uint32_t>(out.vertices.size());
        out.vertices.push_back(mesh.vertices[t[c]]);
      }
      mapped[c] = remap[t[c]];
    }
    out.triangles.push_back(mapped);
  }
  return out;
}

}  // namespace deudf
