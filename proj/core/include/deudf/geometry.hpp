#pragma once

#include "deudf/types.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace deudf {

/// Uniform scale + translation mapping original coordinates into [-1, 1]^3:
/// normalized = scale * (original - translation).
struct NormalizeTransform {
  double scale = 1.0;
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& original) const { return scale * (original - translation); }
  Vec3 inverse(const Vec3& normalized) const { return normalized / scale + translation; }
};

/// Centers the bounding box at the origin and scales its longest edge to 2.
/// Normals, if present, are carried over unchanged.
std::pair<PointCloud, NormalizeTransform> normalize_to_cube(const PointCloud& cloud);
std::pair<PointCloud, NormalizeTransform> normalize_to_cube(std::span<const Vec3> points);

struct Neighbor {
  std::uint32_t index;
  double distance_squared;
};

/// Balanced kd-tree over a fixed point list. Query results match an
/// exhaustive scan exactly; equidistant points are ordered by index.
class SpatialIndex {
 public:
  explicit SpatialIndex(std::span<const Vec3> points, std::size_t leaf_size = 12);

  std::size_t size() const noexcept { return points_.size(); }
  const std::vector<Vec3>& points() const noexcept { return points_; }

  /// k nearest neighbors sorted by ascending distance. Throws KTooLarge.
  std::vector<Neighbor> knn(const Vec3& query, std::size_t k) const;
  std::vector<std::uint32_t> knn_indices(const Vec3& query, std::size_t k) const;

  /// Single nearest neighbor (lowest index among ties).
  Neighbor nearest(const Vec3& query) const;

 private:
  struct Node {
    std::uint32_t begin;
    std::uint32_t end;
    std::int32_t left = -1;
    std::int32_t right = -1;
    int axis = 0;
    double split = 0.0;
  };

  std::int32_t build(std::uint32_t begin, std::uint32_t end);
  template <typename Heap>
  void search(std::int32_t node, const Vec3& query, std::size_t k, Heap& heap) const;

  std::vector<Vec3> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
  std::size_t leaf_size_;
};

SpatialIndex build_index(std::span<const Vec3> points);
std::vector<std::uint32_t> knn_query(const SpatialIndex& index, const Vec3& query, std::size_t k);

struct NormalEstimationStats {
  /// Neighborhoods whose covariance eigenvalues were all below 1e-12.
  std::size_t rank_deficient = 0;
};

/// Unoriented PCA normals from the k nearest neighbors of each point
/// (the point itself included). Each normal is flipped so its first
/// nonzero component is positive.
PointCloud estimate_normals_pca(const PointCloud& cloud, std::size_t k = 16,
                                NormalEstimationStats* stats = nullptr, unsigned threads = 1);

}  // namespace deudf
