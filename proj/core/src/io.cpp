#include "deudf/io.hpp"

#include "deudf/error.hpp"

#include "json.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <system_error>
#include <vector>

namespace deudf {

namespace fs = std::filesystem;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  if (in.bad()) throw Error(ErrorCode::IoError, "read failed for '" + path.string() + "'");
  return std::move(buffer).str();
}

void write_file_atomic(const fs::path& path, std::string_view data) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write '" + tmp.string() + "'");
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw Error(ErrorCode::IoError, "write failed for '" + tmp.string() + "'");
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error(ErrorCode::IoError, "cannot move output into place at '" + path.string() + "'");
  }
}

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

bool parse_double(std::string_view token, double& out) {
  if (!token.empty() && token.front() == '+') token.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), out);
  return ec == std::errc() && ptr == token.data() + token.size();
}

// Calls fn(line_number, line) for each line, without the trailing newline.
template <typename Fn>
void for_each_line(std::string_view text, Fn&& fn) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    fn(++line_no, line);
    pos = end + 1;
  }
}

Vec3 unit_normal(const Vec3& n, std::size_t line) {
  const double len = n.norm();
  if (!(len > 0.0) || !std::isfinite(len)) {
    throw ParseError(ErrorCode::ParseError, line, "normal has zero or non-finite length");
  }
  return n / len;
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace

PointCloud parse_xyz(std::string_view text) {
  PointCloud cloud;
  std::vector<Vec3> normals;
  std::size_t arity = 0;
  for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    const auto tokens = split_ws(line);
    if (tokens.empty() || tokens.front().front() == '#') return;
    if (tokens.size() != 3 && tokens.size() != 6) {
      throw ParseError(ErrorCode::ParseError, line_no,
                       "expected 3 or 6 numbers, found " + std::to_string(tokens.size()));
    }
    if (arity == 0) {
      arity = tokens.size();
    } else if (arity != tokens.size()) {
      throw ParseError(ErrorCode::MixedArity, line_no, "mixes 3-field and 6-field lines");
    }
    double v[6];
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (!parse_double(tokens[i], v[i]) || !std::isfinite(v[i])) {
        throw ParseError(ErrorCode::ParseError, line_no,
                         "not a finite number: '" + std::string(tokens[i]) + "'");
      }
    }
    cloud.points.emplace_back(v[0], v[1], v[2]);
    if (arity == 6) normals.push_back(unit_normal(Vec3(v[3], v[4], v[5]), line_no));
  });
  if (arity == 6) cloud.normals = std::move(normals);
  return cloud;
}

namespace {

struct PlyProperty {
  std::string name;
  std::string type;
  std::size_t offset = 0;
};

std::size_t ply_type_size(const std::string& type) {
  if (type == "char" || type == "uchar" || type == "int8" || type == "uint8") return 1;
  if (type == "short" || type == "ushort" || type == "int16" || type == "uint16") return 2;
  if (type == "int" || type == "uint" || type == "int32" || type == "uint32" ||
      type == "float" || type == "float32") {
    return 4;
  }
  if (type == "double" || type == "float64") return 8;
  return 0;
}

template <typename T>
double read_le(const char* p) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T v;
  std::memcpy(&v, bytes, sizeof(T));
  return static_cast<double>(v);
}

double read_ply_scalar(const std::string& type, const char* p) {
  if (type == "char" || type == "int8") return read_le<std::int8_t>(p);
  if (type == "uchar" || type == "uint8") return read_le<std::uint8_t>(p);
  if (type == "short" || type == "int16") return read_le<std::int16_t>(p);
  if (type == "ushort" || type == "uint16") return read_le<std::uint16_t>(p);
  if (type == "int" || type == "int32") return read_le<std::int32_t>(p);
  if (type == "uint" || type == "uint32") return read_le<std::uint32_t>(p);
  if (type == "float" || type == "float32") return read_le<float>(p);
  return read_le<double>(p);
}

}  // namespace

PointCloud parse_ply(std::string_view bytes) {
  std::size_t pos = 0;
  std::size_t line_no = 0;
  auto next_line = [&]() -> std::string_view {
    if (pos >= bytes.size()) throw ParseError(ErrorCode::ParseError, line_no, "unterminated PLY header");
    std::size_t end = bytes.find('\n', pos);
    if (end == std::string_view::npos) end = bytes.size();
    std::string_view line = bytes.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos = end + 1;
    ++line_no;
    return line;
  };

  if (next_line() != "ply") throw ParseError(ErrorCode::ParseError, 1, "missing 'ply' magic");
  std::string format;
  std::size_t vertex_count = 0;
  bool in_vertex = false;
  bool seen_vertex = false;
  bool element_before_vertex = false;
  std::vector<PlyProperty> props;
  std::size_t stride = 0;
  for (;;) {
    const auto tokens = split_ws(next_line());
    if (tokens.empty()) continue;
    if (tokens[0] == "end_header") break;
    if (tokens[0] == "format" && tokens.size() >= 2) {
      format = tokens[1];
    } else if (tokens[0] == "element" && tokens.size() == 3) {
      in_vertex = tokens[1] == "vertex";
      if (in_vertex) {
        seen_vertex = true;
        const auto [ptr, ec] =
            std::from_chars(tokens[2].data(), tokens[2].data() + tokens[2].size(), vertex_count);
        if (ec != std::errc() || ptr != tokens[2].data() + tokens[2].size()) {
          throw ParseError(ErrorCode::ParseError, line_no, "bad vertex count");
        }
      } else if (!seen_vertex) {
        element_before_vertex = true;
      }
    } else if (tokens[0] == "property" && in_vertex) {
      if (tokens.size() >= 2 && tokens[1] == "list") {
        throw ParseError(ErrorCode::ParseError, line_no, "list properties on vertices are unsupported");
      }
      if (tokens.size() != 3) throw ParseError(ErrorCode::ParseError, line_no, "malformed property");
      PlyProperty p{std::string(tokens[2]), lower(tokens[1]), stride};
      const std::size_t size = ply_type_size(p.type);
      if (size == 0) throw ParseError(ErrorCode::ParseError, line_no, "unknown property type " + p.type);
      stride += size;
      props.push_back(std::move(p));
    }
  }
  if (!seen_vertex) throw ParseError(ErrorCode::ParseError, line_no, "no vertex element");
  if (element_before_vertex) {
    throw ParseError(ErrorCode::ParseError, line_no, "vertex must be the first element");
  }

  auto find = [&](std::string_view name) -> int {
    for (std::size_t i = 0; i < props.size(); ++i) {
      if (props[i].name == name) return static_cast<int>(i);
    }
    return -1;
  };
  const int ix = find("x"), iy = find("y"), iz = find("z");
  const int inx = find("nx"), iny = find("ny"), inz = find("nz");
  if (ix < 0 || iy < 0 || iz < 0) throw ParseError(ErrorCode::ParseError, line_no, "missing x/y/z");
  const bool has_normals = inx >= 0 && iny >= 0 && inz >= 0;

  PointCloud cloud;
  cloud.points.reserve(vertex_count);
  std::vector<Vec3> normals;
  std::vector<double> row(props.size());
  auto emit = [&](std::size_t where) {
    cloud.points.emplace_back(row[ix], row[iy], row[iz]);
    if (!cloud.points.back().allFinite()) {
      throw ParseError(ErrorCode::ParseError, where, "non-finite coordinate");
    }
    if (has_normals) normals.push_back(unit_normal(Vec3(row[inx], row[iny], row[inz]), where));
  };

  if (format == "ascii") {
    for (std::size_t v = 0; v < vertex_count; ++v) {
      const auto tokens = split_ws(next_line());
      if (tokens.size() < props.size()) {
        throw ParseError(ErrorCode::ParseError, line_no, "too few values on vertex line");
      }
      for (std::size_t i = 0; i < props.size(); ++i) {
        if (!parse_double(tokens[i], row[i])) {
          throw ParseError(ErrorCode::ParseError, line_no, "bad number '" + std::string(tokens[i]) + "'");
        }
      }
      emit(line_no);
    }
  } else if (format == "binary_little_endian") {
    if (bytes.size() < pos + vertex_count * stride) {
      throw ParseError(ErrorCode::ParseError, line_no, "binary vertex data is truncated");
    }
    for (std::size_t v = 0; v < vertex_count; ++v) {
      const char* base = bytes.data() + pos + v * stride;
      for (std::size_t i = 0; i < props.size(); ++i) {
        row[i] = read_ply_scalar(props[i].type, base + props[i].offset);
      }
      emit(line_no);
    }
  } else {
    throw ParseError(ErrorCode::ParseError, 2, "unsupported PLY format '" + format + "'");
  }
  if (has_normals) cloud.normals = std::move(normals);
  return cloud;
}

PointCloud load_points(const fs::path& path) {
  const std::string data = read_file(path);
  if (lower(path.extension().string()) == ".ply") return parse_ply(data);
  return parse_xyz(data);
}

void save_points_xyz(const PointCloud& cloud, const fs::path& path) {
  std::ostringstream out;
  out << std::setprecision(17);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.points[i];
    out << p.x() << ' ' << p.y() << ' ' << p.z();
    if (cloud.has_normals()) {
      const Vec3& n = (*cloud.normals)[i];
      out << ' ' << n.x() << ' ' << n.y() << ' ' << n.z();
    }
    out << '\n';
  }
  write_file_atomic(path, out.str());
}

std::string format_obj(const TriangleMesh& mesh) {
  std::ostringstream out;
  out << std::setprecision(17);
  for (const Vec3& v : mesh.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& t : mesh.triangles) {
    out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
  }
  return out.str();
}

void save_mesh_obj(const TriangleMesh& mesh, const fs::path& path) {
  write_file_atomic(path, format_obj(mesh));
}

TriangleMesh parse_obj(std::string_view text) {
  TriangleMesh mesh;
  std::vector<std::vector<long long>> faces;
  std::vector<std::size_t> face_lines;
  for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    const auto tokens = split_ws(line);
    if (tokens.empty() || tokens[0].front() == '#') return;
    if (tokens[0] == "v") {
      if (tokens.size() < 4) throw ParseError(ErrorCode::ParseError, line_no, "vertex needs 3 coordinates");
      double c[3];
      for (int i = 0; i < 3; ++i) {
        if (!parse_double(tokens[i + 1], c[i])) {
          throw ParseError(ErrorCode::ParseError, line_no, "bad coordinate");
        }
      }
      mesh.vertices.emplace_back(c[0], c[1], c[2]);
    } else if (tokens[0] == "f") {
      if (tokens.size() < 4) throw ParseError(ErrorCode::ParseError, line_no, "face needs >= 3 vertices");
      std::vector<long long> ids;
      for (std::size_t i = 1; i < tokens.size(); ++i) {
        const std::string_view head = tokens[i].substr(0, tokens[i].find('/'));
        long long id = 0;
        const auto [ptr, ec] = std::from_chars(head.data(), head.data() + head.size(), id);
        if (ec != std::errc() || ptr != head.data() + head.size() || id == 0) {
          throw ParseError(ErrorCode::ParseError, line_no, "bad face index");
        }
        // Negative indices count back from the vertices read so far.
        ids.push_back(id > 0 ? id - 1 : static_cast<long long>(mesh.vertices.size()) + id);
      }
      faces.push_back(std::move(ids));
      face_lines.push_back(line_no);
    }
  });
  for (std::size_t f = 0; f < faces.size(); ++f) {
    for (long long id : faces[f]) {
      if (id < 0 || id >= static_cast<long long>(mesh.vertices.size())) {
        throw ParseError(ErrorCode::ParseError, face_lines[f], "face index out of range");
      }
    }
    for (std::size_t i = 1; i + 1 < faces[f].size(); ++i) {
      mesh.triangles.push_back({static_cast<std::uint32_t>(faces[f][0]),
                                static_cast<std::uint32_t>(faces[f][i]),
                                static_cast<std::uint32_t>(faces[f][i + 1])});
    }
  }
  return mesh;
}

TriangleMesh load_mesh_obj(const fs::path& path) { return parse_obj(read_file(path)); }

fs::path transform_sidecar_path(const fs::path& checkpoint) {
  fs::path p = checkpoint;
  p += ".transform.json";
  return p;
}

void save_transform(const NormalizeTransform& transform, const fs::path& path) {
  nlohmann::json j;
  j["scale"] = transform.scale;
  j["translation"] = {transform.translation.x(), transform.translation.y(),
                      transform.translation.z()};
  write_file_atomic(path, j.dump(2) + "\n");
}

NormalizeTransform load_transform(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    const auto j = nlohmann::json::parse(text);
    NormalizeTransform t;
    t.scale = j.at("scale").get<double>();
    const auto tr = j.at("translation").get<std::vector<double>>();
    if (tr.size() != 3 || !(t.scale > 0.0)) throw std::runtime_error("bad transform values");
    t.translation = Vec3(tr[0], tr[1], tr[2]);
    return t;
  } catch (const std::exception& e) {
    throw Error(ErrorCode::IoError, "invalid transform sidecar '" + path.string() + "': " + e.what());
  }
}

}  // namespace deudf
