#pragma once

#include "deudf/field_model.hpp"
#include "deudf/training.hpp"
#include "deudf/types.hpp"

#include <cmath>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <unistd.h>

namespace deudf::testing {

/// Points on the sphere of the given radius with outward unit normals.
inline PointCloud sphere_cloud(std::size_t n, double radius, std::uint64_t seed) {
  Rng rng(seed);
  PointCloud cloud;
  std::vector<Vec3> normals;
  cloud.points.reserve(n);
  normals.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 u = random_unit_vector(rng);
    cloud.points.push_back(radius * u);
    normals.push_back(u);
  }
  cloud.normals = std::move(normals);
  return cloud;
}

/// Upper half (z >= 0) of the sphere.
inline PointCloud half_sphere_cloud(std::size_t n, double radius, std::uint64_t seed) {
  Rng rng(seed);
  PointCloud cloud;
  std::vector<Vec3> normals;
  while (cloud.points.size() < n) {
    Vec3 u = random_unit_vector(rng);
    u.z() = std::abs(u.z());
    cloud.points.push_back(radius * u);
    normals.push_back(u);
  }
  cloud.normals = std::move(normals);
  return cloud;
}

/// Uniform samples of the square [-extent, extent]^2 in the plane z = 0.
inline PointCloud plane_cloud(std::size_t n, double extent, std::uint64_t seed) {
  Rng rng(seed);
  PointCloud cloud;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = extent * (2.0 * uniform01(rng) - 1.0);
    const double y = extent * (2.0 * uniform01(rng) - 1.0);
    cloud.points.emplace_back(x, y, 0.0);
  }
  cloud.normals = std::vector<Vec3>(n, Vec3::UnitZ());
  return cloud;
}

/// |‖x‖ - r|, the unsigned distance to a sphere.
class SphereUdf final : public Field {
 public:
  explicit SphereUdf(double radius) : radius_(radius) {}
  void values(std::span<const Vec3> points, std::span<double> out) const override {
    for (std::size_t i = 0; i < points.size(); ++i) out[i] = std::abs(points[i].norm() - radius_);
  }
  void values_and_gradients(std::span<const Vec3> points, std::span<double> values,
                            std::span<Vec3> gradients) const override {
    for (std::size_t i = 0; i < points.size(); ++i) {
      const double r = points[i].norm();
      values[i] = std::abs(r - radius_);
      const Vec3 dir = r > 0.0 ? Vec3(points[i] / r) : Vec3::Zero();
      gradients[i] = (r >= radius_ ? 1.0 : -1.0) * dir;
    }
  }

 private:
  double radius_;
};

/// ‖x‖ - r, the signed distance to a sphere.
class SphereSdf final : public Field {
 public:
  explicit SphereSdf(double radius) : radius_(radius) {}
  void values(std::span<const Vec3> points, std::span<double> out) const override {
    for (std::size_t i = 0; i < points.size(); ++i) out[i] = points[i].norm() - radius_;
  }
  void values_and_gradients(std::span<const Vec3> points, std::span<double> values,
                            std::span<Vec3> gradients) const override {
    for (std::size_t i = 0; i < points.size(); ++i) {
      const double r = points[i].norm();
      values[i] = r - radius_;
      gradients[i] = r > 0.0 ? Vec3(points[i] / r) : Vec3::Zero();
    }
  }

 private:
  double radius_;
};

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline TempDir::TempDir(const std::string& tag) {
  static int counter = 0;
  const auto base = std::filesystem::temp_directory_path();
  for (;;) {
    path_ = base / ("deudf_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    if (std::filesystem::create_directory(path_)) break;
  }
}

inline TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

}  // namespace deudf::testing
