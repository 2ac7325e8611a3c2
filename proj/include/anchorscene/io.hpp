#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "anchorscene/geometry.hpp"

namespace ancs {

namespace fs = std::filesystem;

/// Write-then-rename so partially written outputs are never observed.
inline void atomic_write_file(const fs::path& path, const std::string& data) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".")
                                                    : path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for write: " + tmp.string());
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// PLY (ascii and binary_little_endian), double-precision vertex positions,
// optional uchar colors.
// ---------------------------------------------------------------------------

struct PlyColor {
  std::uint8_t r = 200, g = 200, b = 200;
};

inline std::string encode_ply(const PointCloud& pc, bool binary = true,
                              const std::vector<PlyColor>* colors = nullptr) {
  if (colors && colors->size() != pc.size())
    throw std::invalid_argument("color count mismatch");
  std::ostringstream out;
  out << "ply\nformat "
      << (binary ? "binary_little_endian" : "ascii") << " 1.0\n"
      << "element vertex " << pc.size() << "\n"
      << "property double x\nproperty double y\nproperty double z\n";
  if (colors)
    out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out << "end_header\n";
  if (binary) {
    for (std::size_t i = 0; i < pc.size(); ++i) {
      double xyz[3] = {pc.points[i].x(), pc.points[i].y(), pc.points[i].z()};
      out.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
      if (colors) {
        const PlyColor& c = (*colors)[i];
        out.write(reinterpret_cast<const char*>(&c.r), 1);
        out.write(reinterpret_cast<const char*>(&c.g), 1);
        out.write(reinterpret_cast<const char*>(&c.b), 1);
      }
    }
  } else {
    out.precision(17);
    for (std::size_t i = 0; i < pc.size(); ++i) {
      out << pc.points[i].x() << " " << pc.points[i].y() << " "
          << pc.points[i].z();
      if (colors) {
        const PlyColor& c = (*colors)[i];
        out << " " << int(c.r) << " " << int(c.g) << " " << int(c.b);
      }
      out << "\n";
    }
  }
  return out.str();
}

inline void write_ply(const fs::path& path, const PointCloud& pc,
                      bool binary = true,
                      const std::vector<PlyColor>* colors = nullptr) {
  atomic_write_file(path, encode_ply(pc, binary, colors));
}

namespace detail {

struct PlyProperty {
  std::string name;
  std::string type;
};

inline std::size_t ply_type_size(const std::string& t) {
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "int32" || t == "uint32" ||
      t == "float" || t == "float32")
    return 4;
  if (t == "double" || t == "float64" || t == "int64" || t == "uint64") return 8;
  throw std::runtime_error("unsupported ply property type: " + t);
}

inline double ply_read_scalar(const char* p, const std::string& t) {
  if (t == "float" || t == "float32") {
    float v;
    std::memcpy(&v, p, 4);
    return v;
  }
  if (t == "double" || t == "float64") {
    double v;
    std::memcpy(&v, p, 8);
    return v;
  }
  if (t == "int" || t == "int32") {
    std::int32_t v;
    std::memcpy(&v, p, 4);
    return v;
  }
  if (t == "uchar" || t == "uint8") {
    return static_cast<unsigned char>(*p);
  }
  throw std::runtime_error("unsupported ply scalar read: " + t);
}

}  // namespace detail

/// Reads ascii or binary_little_endian PLY; extracts x/y/z (float or double),
/// ignoring any other vertex properties and elements.
inline PointCloud decode_ply(const std::string& blob) {
  std::istringstream in(blob);
  std::string line;
  if (!std::getline(in, line) || line.rfind("ply", 0) != 0)
    throw std::runtime_error("not a ply file");
  bool binary = false;
  std::size_t vertex_count = 0;
  std::vector<detail::PlyProperty> props;
  bool in_vertex_element = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "format") {
      std::string f;
      ls >> f;
      if (f == "binary_little_endian")
        binary = true;
      else if (f != "ascii")
        throw std::runtime_error("unsupported ply format: " + f);
    } else if (tok == "element") {
      std::string name;
      std::size_t count;
      ls >> name >> count;
      in_vertex_element = (name == "vertex");
      if (in_vertex_element) vertex_count = count;
      else if (count > 0 && !props.empty())
        throw std::runtime_error("ply: non-vertex elements after vertex not supported");
    } else if (tok == "property" && in_vertex_element) {
      detail::PlyProperty p;
      ls >> p.type >> p.name;
      if (p.type == "list")
        throw std::runtime_error("ply: list property on vertex not supported");
      props.push_back(p);
    } else if (tok == "end_header") {
      break;
    }
  }
  int ix = -1, iy = -1, iz = -1;
  for (int i = 0; i < static_cast<int>(props.size()); ++i) {
    if (props[i].name == "x") ix = i;
    if (props[i].name == "y") iy = i;
    if (props[i].name == "z") iz = i;
  }
  if (ix < 0 || iy < 0 || iz < 0)
    throw std::runtime_error("ply: missing x/y/z vertex properties");

  PointCloud pc;
  pc.points.reserve(vertex_count);
  if (binary) {
    std::size_t row = 0;
    std::vector<std::size_t> offset(props.size());
    for (std::size_t i = 0; i < props.size(); ++i) {
      offset[i] = row;
      row += detail::ply_type_size(props[i].type);
    }
    const std::size_t start = static_cast<std::size_t>(in.tellg());
    if (blob.size() < start + row * vertex_count)
      throw std::runtime_error("ply: truncated binary payload");
    for (std::size_t v = 0; v < vertex_count; ++v) {
      const char* base = blob.data() + start + v * row;
      pc.points.emplace_back(
          detail::ply_read_scalar(base + offset[ix], props[ix].type),
          detail::ply_read_scalar(base + offset[iy], props[iy].type),
          detail::ply_read_scalar(base + offset[iz], props[iz].type));
    }
  } else {
    for (std::size_t v = 0; v < vertex_count; ++v) {
      if (!std::getline(in, line)) throw std::runtime_error("ply: truncated ascii payload");
      std::istringstream ls(line);
      std::vector<double> vals(props.size());
      for (std::size_t i = 0; i < props.size(); ++i)
        if (!(ls >> vals[i])) throw std::runtime_error("ply: bad ascii row");
      pc.points.emplace_back(vals[ix], vals[iy], vals[iz]);
    }
  }
  return pc;
}

inline PointCloud read_ply(const fs::path& path) {
  return decode_ply(read_file(path));
}

// ---------------------------------------------------------------------------
// OBJ triangle meshes.
// ---------------------------------------------------------------------------

inline std::string encode_obj(const TriMesh& mesh) {
  std::ostringstream out;
  out.precision(17);
  for (const Vec3& v : mesh.vertices)
    out << "v " << v.x() << " " << v.y() << " " << v.z() << "\n";
  for (const auto& t : mesh.triangles)
    out << "f " << t[0] + 1 << " " << t[1] + 1 << " " << t[2] + 1 << "\n";
  return out.str();
}

inline void write_obj(const fs::path& path, const TriMesh& mesh) {
  atomic_write_file(path, encode_obj(mesh));
}

inline TriMesh decode_obj(const std::string& blob) {
  std::istringstream in(blob);
  std::string line;
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> tris;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "v") {
      double x, y, z;
      ls >> x >> y >> z;
      vertices.emplace_back(x, y, z);
    } else if (tok == "f") {
      std::vector<int> idx;
      std::string f;
      while (ls >> f) {
        // accept "i", "i/t", "i/t/n"
        idx.push_back(std::stoi(f.substr(0, f.find('/'))) - 1);
      }
      for (std::size_t k = 2; k < idx.size(); ++k)  // fan-triangulate
        tris.push_back({idx[0], idx[k - 1], idx[k]});
    }
  }
  return make_trimesh(std::move(vertices), tris);
}

inline TriMesh read_obj(const fs::path& path) {
  return decode_obj(read_file(path));
}

// ---------------------------------------------------------------------------
// Raw int32 arrays (per-point instance labels).
// ---------------------------------------------------------------------------

inline void write_i32_array(const fs::path& path,
                            const std::vector<std::int32_t>& values) {
  std::string blob;
  const std::uint32_t n = static_cast<std::uint32_t>(values.size());
  blob.append(reinterpret_cast<const char*>(&n), 4);
  blob.append(reinterpret_cast<const char*>(values.data()), 4 * values.size());
  atomic_write_file(path, blob);
}

inline std::vector<std::int32_t> read_i32_array(const fs::path& path) {
  const std::string blob = read_file(path);
  if (blob.size() < 4) throw std::runtime_error("truncated i32 array: " + path.string());
  std::uint32_t n;
  std::memcpy(&n, blob.data(), 4);
  if (blob.size() < 4 + 4ull * n)
    throw std::runtime_error("truncated i32 array: " + path.string());
  std::vector<std::int32_t> out(n);
  std::memcpy(out.data(), blob.data() + 4, 4ull * n);
  return out;
}

}  // namespace ancs
