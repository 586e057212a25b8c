#pragma once

#include "deudf/field_model.hpp"
#include "deudf/training.hpp"
#include "deudf/types.hpp"

#include <iosfwd>
#include <span>
#include <vector>

namespace deudf {

/// Area-weighted uniform samples on the mesh surface.
std::vector<Vec3> sample_mesh_surface(const TriangleMesh& mesh, std::size_t n, Rng& rng);

/// 0.5 * (mean_a min_b |a - b| + mean_b min_a |a - b|), un-squared distances.
double chamfer_l1(std::span<const Vec3> a, std::span<const Vec3> b, unsigned threads = 1);

struct FScore {
  double precision;  // percent of A within tau of B
  double recall;     // percent of B within tau of A
  double f1;
};

FScore f_score(std::span<const Vec3> a, std::span<const Vec3> b, double tau, unsigned threads = 1);

/// Mean |f| over the mesh vertices.
double zero_deviation(const TriangleMesh& mesh, const Field& field);

/// Distances from each point of `queries` to its nearest point in `targets`.
std::vector<double> nearest_distances(std::span<const Vec3> queries, std::span<const Vec3> targets,
                                      unsigned threads = 1);

struct MetricsRecord {
  double cd = 0.0;  // Chamfer-L1 in units of 1e-3
  double f1_0005 = 0.0;
  double f1_00025 = 0.0;
  double zero_dev = 0.0;
  std::size_t sample_count = 0;
};

/// Chamfer-L1 and both F-scores from two sample sets; zero_dev is left to the caller.
MetricsRecord evaluate_reconstruction(std::span<const Vec3> predicted_samples,
                                      std::span<const Vec3> reference_samples,
                                      unsigned threads = 1);

/// Header `cd_x1e3,f1_0005,f1_00025,zero_dev,samples` then one row.
void write_metrics_csv(const MetricsRecord& record, std::ostream& out);

}  // namespace deudf
