#pragma once

#include "deudf/geometry.hpp"
#include "deudf/types.hpp"

#include <filesystem>
#include <string>
#include <string_view>

namespace deudf {

std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temporary file and renames it over `path`, so a
/// failed write never leaves a partial file behind.
void write_file_atomic(const std::filesystem::path& path, std::string_view data);

/// XYZ text (`x y z` or `x y z nx ny nz` per line, `#` comments) or PLY
/// (ascii / binary_little_endian) chosen by extension. Normals are
/// re-normalized to unit length.
PointCloud load_points(const std::filesystem::path& path);
PointCloud parse_xyz(std::string_view text);
PointCloud parse_ply(std::string_view bytes);

/// `x y z [nx ny nz]` lines with 17 significant digits.
void save_points_xyz(const PointCloud& cloud, const std::filesystem::path& path);

/// `v x y z` lines (17 significant digits) then 1-based `f i j k` lines.
std::string format_obj(const TriangleMesh& mesh);
void save_mesh_obj(const TriangleMesh& mesh, const std::filesystem::path& path);
TriangleMesh parse_obj(std::string_view text);
TriangleMesh load_mesh_obj(const std::filesystem::path& path);

/// `<checkpoint>.transform.json` sidecar holding the normalization transform.
std::filesystem::path transform_sidecar_path(const std::filesystem::path& checkpoint);
void save_transform(const NormalizeTransform& transform, const std::filesystem::path& path);
NormalizeTransform load_transform(const std::filesystem::path& path);

}  // namespace deudf
