#include "deudf/metrics.hpp"

#include "deudf/error.hpp"
#include "deudf/geometry.hpp"
#include "parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

namespace deudf {

std::vector<Vec3> sample_mesh_surface(const TriangleMesh& mesh, std::size_t n, Rng& rng) {
  if (mesh.empty()) throw Error(ErrorCode::EmptyMesh, "cannot sample an empty mesh");
  std::vector<double> cumulative(mesh.triangles.size());
  double total = 0.0;
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const auto& tri = mesh.triangles[t];
    const Vec3& a = mesh.vertices[tri[0]];
    total += 0.5 * (mesh.vertices[tri[1]] - a).cross(mesh.vertices[tri[2]] - a).norm();
    cumulative[t] = total;
  }
  if (!(total > 0.0)) throw Error(ErrorCode::ZeroArea, "every triangle is degenerate");

  std::vector<Vec3> out;
  out.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    const double pick = uniform01(rng) * total;
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), pick);
    const std::size_t t = std::min<std::size_t>(
        static_cast<std::size_t>(it - cumulative.begin()), cumulative.size() - 1);
    double u = uniform01(rng);
    double v = uniform01(rng);
    if (u + v > 1.0) {
      u = 1.0 - u;
      v = 1.0 - v;
    }
    const auto& tri = mesh.triangles[t];
    const Vec3& a = mesh.vertices[tri[0]];
    out.push_back(a + u * (mesh.vertices[tri[1]] - a) + v * (mesh.vertices[tri[2]] - a));
  }
  return out;
}

std::vector<double> nearest_distances(std::span<const Vec3> queries, std::span<const Vec3> targets,
                                      unsigned threads) {
  if (queries.empty() || targets.empty()) {
    throw Error(ErrorCode::EmptyInput, "nearest-neighbor distance needs two nonempty sets");
  }
  const SpatialIndex index(targets);
  std::vector<double> out(queries.size());
  detail::parallel_for(queries.size(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      out[i] = std::sqrt(index.nearest(queries[i]).distance_squared);
    }
  });
  return out;
}

namespace {

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double percent_within(const std::vector<double>& d, double tau) {
  const auto hits = std::count_if(d.begin(), d.end(), [tau](double x) { return x <= tau; });
  return 100.0 * static_cast<double>(hits) / static_cast<double>(d.size());
}

FScore combine(double precision, double recall) {
  const double sum = precision + recall;
  return FScore{precision, recall, sum > 0.0 ? 2.0 * precision * recall / sum : 0.0};
}

}  // namespace

double chamfer_l1(std::span<const Vec3> a, std::span<const Vec3> b, unsigned threads) {
  if (a.empty() || b.empty()) throw Error(ErrorCode::EmptyInput, "chamfer needs two nonempty sets");
  const double ab = mean(nearest_distances(a, b, threads));
  const double ba = mean(nearest_distances(b, a, threads));
  return 0.5 * (ab + ba);
}

FScore f_score(std::span<const Vec3> a, std::span<const Vec3> b, double tau, unsigned threads) {
  if (a.empty() || b.empty()) throw Error(ErrorCode::EmptyInput, "f-score needs two nonempty sets");
  if (!(tau > 0.0)) throw Error(ErrorCode::Validation, "f-score threshold must be positive");
  return combine(percent_within(nearest_distances(a, b, threads), tau),
                 percent_within(nearest_distances(b, a, threads), tau));
}

double zero_deviation(const TriangleMesh& mesh, const Field& field) {
  if (mesh.vertices.empty() || mesh.empty()) throw Error(ErrorCode::EmptyMesh, "mesh is empty");
  std::vector<double> values(mesh.vertices.size());
  field.values(mesh.vertices, values);
  double s = 0.0;
  for (double v : values) s += std::abs(v);
  return s / static_cast<double>(values.size());
}

MetricsRecord evaluate_reconstruction(std::span<const Vec3> predicted_samples,
                                      std::span<const Vec3> reference_samples, unsigned threads) {
  if (predicted_samples.empty() || reference_samples.empty()) {
    throw Error(ErrorCode::EmptyInput, "metrics need two nonempty sample sets");
  }
  const auto pred_to_ref = nearest_distances(predicted_samples, reference_samples, threads);
  const auto ref_to_pred = nearest_distances(reference_samples, predicted_samples, threads);
  MetricsRecord record;
  record.cd = 0.5 * (mean(pred_to_ref) + mean(ref_to_pred)) * 1e3;
  record.f1_0005 = combine(percent_within(pred_to_ref, 0.005), percent_within(ref_to_pred, 0.005)).f1;
  record.f1_00025 =
      combine(percent_within(pred_to_ref, 0.0025), percent_within(ref_to_pred, 0.0025)).f1;
  record.sample_count = std::min(predicted_samples.size(), reference_samples.size());
  return record;
}

void write_metrics_csv(const MetricsRecord& record, std::ostream& out) {
  const auto old_precision = out.precision(std::numeric_limits<double>::max_digits10);
  out << "cd_x1e3,f1_0005,f1_00025,zero_dev,samples\n"
      << record.cd << ',' << record.f1_0005 << ',' << record.f1_00025 << ',' << record.zero_dev
      << ',' << record.sample_count << '\n';
  out.precision(old_precision);
}

}  // namespace deudf
