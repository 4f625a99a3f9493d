#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "pointvote/common.hpp"
#include "pointvote/geometry/point_cloud.hpp"

namespace pointvote {

// Reads and writes point clouds (and triangle lists) as PLY, ASCII or binary
// little-endian. Recognized vertex properties: x y z, nx ny nz curvature,
// red green blue (uchar scaled by 1/255, or float in [0,1]). View origin and
// intrinsics travel in "comment" lines.

struct PlyMesh {
  PointCloud cloud;
  std::vector<std::array<std::size_t, 3>> faces;
};

namespace detail {

enum class PlyType { kI8, kU8, kI16, kU16, kI32, kU32, kF32, kF64 };

inline PlyType ply_type(const std::string& name) {
  if (name == "char" || name == "int8") return PlyType::kI8;
  if (name == "uchar" || name == "uint8") return PlyType::kU8;
  if (name == "short" || name == "int16") return PlyType::kI16;
  if (name == "ushort" || name == "uint16") return PlyType::kU16;
  if (name == "int" || name == "int32") return PlyType::kI32;
  if (name == "uint" || name == "uint32") return PlyType::kU32;
  if (name == "float" || name == "float32") return PlyType::kF32;
  if (name == "double" || name == "float64") return PlyType::kF64;
  throw Error(ErrorCode::kParse, "PLY: unknown property type '" + name + "'");
}

inline std::size_t ply_size(PlyType t) {
  switch (t) {
    case PlyType::kI8: case PlyType::kU8: return 1;
    case PlyType::kI16: case PlyType::kU16: return 2;
    case PlyType::kI32: case PlyType::kU32: case PlyType::kF32: return 4;
    case PlyType::kF64: return 8;
  }
  return 0;
}

struct PlyProperty {
  std::string name;
  PlyType type = PlyType::kF32;
  bool is_list = false;
  PlyType count_type = PlyType::kU8;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> props;
};

template <typename T>
T read_raw(std::istream& in) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error(ErrorCode::kParse, "PLY: unexpected end of binary data");
  return v;
}

inline double read_binary_value(std::istream& in, PlyType t) {
  switch (t) {
    case PlyType::kI8: return read_raw<std::int8_t>(in);
    case PlyType::kU8: return read_raw<std::uint8_t>(in);
    case PlyType::kI16: return read_raw<std::int16_t>(in);
    case PlyType::kU16: return read_raw<std::uint16_t>(in);
    case PlyType::kI32: return read_raw<std::int32_t>(in);
    case PlyType::kU32: return read_raw<std::uint32_t>(in);
    case PlyType::kF32: return read_raw<float>(in);
    case PlyType::kF64: return read_raw<double>(in);
  }
  return 0;
}

inline double read_ascii_value(std::istream& in) {
  std::string tok;
  if (!(in >> tok)) throw Error(ErrorCode::kParse, "PLY: unexpected end of ASCII data");
  try {
    return std::stod(tok);
  } catch (const std::exception&) {
    throw Error(ErrorCode::kParse, "PLY: bad number '" + tok + "'");
  }
}

}  // namespace detail

inline PlyMesh read_ply_mesh(const std::string& path) {
  using namespace detail;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open PLY file " + path);
  std::string line;
  std::getline(in, line);
  if (line.rfind("ply", 0) != 0) throw Error(ErrorCode::kParse, "PLY: missing magic in " + path);
  bool binary = false;
  std::vector<PlyElement> elements;
  PlyMesh mesh;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "ascii") binary = false;
      else if (fmt == "binary_little_endian") binary = true;
      else throw Error(ErrorCode::kParse, "PLY: unsupported format " + fmt);
    } else if (key == "comment") {
      std::string tag;
      ls >> tag;
      if (tag == "view_origin") {
        Vec3 v;
        ls >> v.x() >> v.y() >> v.z();
        mesh.cloud.view_origin = v;
      } else if (tag == "intrinsics") {
        Intrinsics k;
        ls >> k.fx >> k.fy >> k.cx >> k.cy >> k.width >> k.height;
        mesh.cloud.intrinsics = k;
      }
    } else if (key == "element") {
      PlyElement e;
      ls >> e.name >> e.count;
      elements.push_back(e);
    } else if (key == "property") {
      if (elements.empty()) throw Error(ErrorCode::kParse, "PLY: property before element");
      PlyProperty p;
      std::string t;
      ls >> t;
      if (t == "list") {
        std::string ct, it;
        ls >> ct >> it >> p.name;
        p.is_list = true;
        p.count_type = ply_type(ct);
        p.type = ply_type(it);
      } else {
        p.type = ply_type(t);
        ls >> p.name;
      }
      elements.back().props.push_back(p);
    } else if (key == "end_header") {
      break;
    }
  }
  if (!in) throw Error(ErrorCode::kParse, "PLY: header not terminated in " + path);

  for (const auto& e : elements) {
    const bool is_vertex = e.name == "vertex";
    const bool is_face = e.name == "face";
    int ix = -1, iy = -1, iz = -1, inx = -1, iny = -1, inz = -1, icurv = -1, ir = -1, ig = -1, ib = -1;
    for (int k = 0; k < static_cast<int>(e.props.size()); ++k) {
      const auto& n = e.props[k].name;
      if (n == "x") ix = k;
      else if (n == "y") iy = k;
      else if (n == "z") iz = k;
      else if (n == "nx") inx = k;
      else if (n == "ny") iny = k;
      else if (n == "nz") inz = k;
      else if (n == "curvature") icurv = k;
      else if (n == "red") ir = k;
      else if (n == "green") ig = k;
      else if (n == "blue") ib = k;
    }
    if (is_vertex) {
      if (ix < 0 || iy < 0 || iz < 0) throw Error(ErrorCode::kParse, "PLY: vertex lacks x/y/z");
      mesh.cloud.has_normals = inx >= 0 && iny >= 0 && inz >= 0;
      mesh.cloud.has_color = ir >= 0 && ig >= 0 && ib >= 0;
      mesh.cloud.points.reserve(e.count);
    }
    std::vector<double> vals(e.props.size());
    for (std::size_t row = 0; row < e.count; ++row) {
      std::vector<std::size_t> face;
      for (std::size_t k = 0; k < e.props.size(); ++k) {
        const auto& p = e.props[k];
        if (p.is_list) {
          const auto cnt = static_cast<std::size_t>(binary ? read_binary_value(in, p.count_type)
                                                           : read_ascii_value(in));
          for (std::size_t c = 0; c < cnt; ++c) {
            const double v = binary ? read_binary_value(in, p.type) : read_ascii_value(in);
            if (is_face) face.push_back(static_cast<std::size_t>(v));
          }
          vals[k] = 0;
        } else {
          vals[k] = binary ? read_binary_value(in, p.type) : read_ascii_value(in);
        }
      }
      if (is_vertex) {
        Point pt;
        pt.position = Vec3(vals[ix], vals[iy], vals[iz]);
        if (mesh.cloud.has_normals) {
          pt.normal = Vec3(vals[inx], vals[iny], vals[inz]);
          pt.curvature = icurv >= 0 ? vals[icurv] : 0.0;
        }
        if (mesh.cloud.has_color) {
          auto scale = [&](int k) {
            const auto t = e.props[k].type;
            return (t == PlyType::kF32 || t == PlyType::kF64) ? vals[k] : vals[k] / 255.0;
          };
          pt.color = Vec3(scale(ir), scale(ig), scale(ib));
        }
        mesh.cloud.points.push_back(pt);
      } else if (is_face) {
        // Fan-triangulate polygons.
        for (std::size_t c = 2; c < face.size(); ++c) mesh.faces.push_back({face[0], face[c - 1], face[c]});
      }
    }
  }
  for (const auto& f : mesh.faces) {
    for (auto v : f) {
      if (v >= mesh.cloud.size()) throw Error(ErrorCode::kParse, "PLY: face index out of range");
    }
  }
  return mesh;
}

inline PointCloud read_ply(const std::string& path) { return read_ply_mesh(path).cloud; }

inline std::uint8_t color_to_u8(double c) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(c, 0.0, 1.0) * 255.0));
}

inline void write_ply(const std::string& path, const PointCloud& cloud, bool binary = true) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write PLY file " + path);
  out << "ply\nformat " << (binary ? "binary_little_endian" : "ascii") << " 1.0\n";
  if (cloud.view_origin) {
    const auto& v = *cloud.view_origin;
    out << std::setprecision(17) << "comment view_origin " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  }
  if (cloud.intrinsics) {
    const auto& k = *cloud.intrinsics;
    out << std::setprecision(17) << "comment intrinsics " << k.fx << ' ' << k.fy << ' ' << k.cx << ' '
        << k.cy << ' ' << k.width << ' ' << k.height << '\n';
  }
  out << "element vertex " << cloud.size() << "\n";
  out << "property float x\nproperty float y\nproperty float z\n";
  if (cloud.has_normals) {
    out << "property float nx\nproperty float ny\nproperty float nz\nproperty float curvature\n";
  }
  if (cloud.has_color) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out << "end_header\n";
  if (binary) {
    auto put = [&](float f) { out.write(reinterpret_cast<const char*>(&f), sizeof f); };
    for (const auto& p : cloud.points) {
      for (int k = 0; k < 3; ++k) put(static_cast<float>(p.position[k]));
      if (cloud.has_normals) {
        for (int k = 0; k < 3; ++k) put(static_cast<float>(p.normal[k]));
        put(static_cast<float>(p.curvature));
      }
      if (cloud.has_color) {
        for (int k = 0; k < 3; ++k) {
          const std::uint8_t c = color_to_u8(p.color[k]);
          out.write(reinterpret_cast<const char*>(&c), 1);
        }
      }
    }
  } else {
    out << std::setprecision(9);
    for (const auto& p : cloud.points) {
      out << static_cast<float>(p.position.x()) << ' ' << static_cast<float>(p.position.y()) << ' '
          << static_cast<float>(p.position.z());
      if (cloud.has_normals) {
        out << ' ' << static_cast<float>(p.normal.x()) << ' ' << static_cast<float>(p.normal.y()) << ' '
            << static_cast<float>(p.normal.z()) << ' ' << static_cast<float>(p.curvature);
      }
      if (cloud.has_color) {
        out << ' ' << int(color_to_u8(p.color.x())) << ' ' << int(color_to_u8(p.color.y())) << ' '
            << int(color_to_u8(p.color.z()));
      }
      out << '\n';
    }
  }
  if (!out) throw Error(ErrorCode::kIo, "failed writing PLY file " + path);
}

}  // namespace pointvote
