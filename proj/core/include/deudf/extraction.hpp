#pragma once

#include "deudf/field_model.hpp"
#include "deudf/types.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace deudf {

/// Dense samples on the regular lattice spanning [-1, 1]^3.
/// values[i + res * (j + res * k)] = f(origin + spacing * (i, j, k)).
struct ScalarGrid {
  int resolution = 0;
  Vec3 origin = Vec3::Constant(-1.0);
  double spacing = 0.0;
  std::vector<double> values;

  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(resolution) *
               (static_cast<std::size_t>(j) + static_cast<std::size_t>(resolution) * k);
  }
  double at(int i, int j, int k) const { return values[index(i, j, k)]; }
  Vec3 point(int i, int j, int k) const { return origin + spacing * Vec3(i, j, k); }
};

constexpr int kMinGridResolution = 8;

/// Evaluates the field slab by slab (one z-slice per work item).
ScalarGrid evaluate_grid(const Field& field, int resolution, unsigned threads = 1);

/// Marching cubes with linear edge interpolation. Vertices on shared lattice
/// edges are merged; triangles face toward increasing field values.
TriangleMesh marching_cubes(const ScalarGrid& grid, double iso);

struct ShrinkConfig {
  int iterations = 300;
  /// Per-iteration displacement cap, in units of the largest |grad f|.
  double step_size = 1e-3;
  /// Weight of the umbrella (1-ring mean) smoothing term.
  double alpha_smooth = 0.1;
  /// Stop after this many consecutive increases of mean |f|.
  int patience = 10;
};

struct ShrinkReport {
  int iterations_run = 0;
  double mean_abs_before = 0.0;
  double mean_abs_after = 0.0;
  std::vector<double> mean_abs_history;
};

/// Moves vertices downhill on f^2 + alpha * |v - ring mean|^2 so the double
/// cover collapses onto the local-minimum surface of the field. Returns the
/// iterate with the smallest mean |f|.
TriangleMesh shrink_to_minimum(const TriangleMesh& mesh, const Field& field,
                               const ShrinkConfig& config = {}, ShrinkReport* report = nullptr);

struct FoldTrimConfig {
  bool enabled = true;
  /// Probe distance along the face normal, in grid spacings.
  double probe_cells = 2.0;
  /// Required rise of f on both sides, as a fraction of the probe distance.
  double min_rise = 0.5;
};

/// Drops faces that do not sit in a two-sided valley of the field: faces
/// wrapped around the rim of an open sheet see the sheet itself on one side.
/// Unreferenced vertices are removed.
TriangleMesh trim_folds(const TriangleMesh& mesh, const Field& field, double probe,
                        double min_rise);

struct ExtractConfig {
  int resolution = 256;
  double iso = 0.005;
  ShrinkConfig shrink;
  FoldTrimConfig trim;
  unsigned threads = 1;
};

/// evaluate_grid -> marching_cubes(iso) -> shrink_to_minimum -> trim_folds.
/// Throws EmptyLevelSet when the grid never drops below iso.
TriangleMesh extract_surface(const Field& field, const ExtractConfig& config = {},
                             ShrinkReport* report = nullptr);

// Mesh topology helpers.

/// Edges with exactly one incident triangle, as (lo, hi) vertex pairs.
std::vector<std::array<std::uint32_t, 2>> boundary_edges(const TriangleMesh& mesh);
/// Connected components of the boundary-edge graph.
std::size_t boundary_loop_count(const TriangleMesh& mesh);
std::size_t connected_components(const TriangleMesh& mesh);
TriangleMesh remove_unreferenced_vertices(const TriangleMesh& mesh);

}  // namespace deudf
