#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

namespace deudf {

using Vec3 = Eigen::Vector3d;

/// Points in the normalized cube domain, optionally with unit normals
/// parallel to `points`.
struct PointCloud {
  std::vector<Vec3> points;
  std::optional<std::vector<Vec3>> normals;

  std::size_t size() const noexcept { return points.size(); }
  bool has_normals() const noexcept { return normals.has_value(); }
};

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::uint32_t, 3>> triangles;

  bool empty() const noexcept { return triangles.empty(); }
};

}  // namespace deudf
