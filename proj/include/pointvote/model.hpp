#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pointvote/geometry/cloud_ops.hpp"
#include "pointvote/geometry/nn_index.hpp"
#include "pointvote/geometry/ply_io.hpp"
#include "pointvote/geometry/rigid.hpp"

namespace pointvote {

struct SymmetryDescriptor {
  enum class Kind { kNone, kCyclic, kRevolution };
  Kind kind = Kind::kNone;
  int fold = 0;  // cyclic only, >= 2
  Vec3 axis = Vec3::UnitZ();
  Vec3 center = Vec3::Zero();

  static SymmetryDescriptor none() { return {}; }
  static SymmetryDescriptor cyclic(int n, const Vec3& axis, const Vec3& center) {
    if (n < 2) throw Error(ErrorCode::kInvalidArgument, "cyclic symmetry needs fold >= 2");
    return {Kind::kCyclic, n, axis.normalized(), center};
  }
  static SymmetryDescriptor revolution(const Vec3& axis, const Vec3& center) {
    return {Kind::kRevolution, 0, axis.normalized(), center};
  }
};

struct Keypoint {
  Vec3 position = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
};

/// Dense model cloud plus its K keypoints. Segmentation label k in 1..K refers
/// to keypoints[k-1].
struct ObjectModel {
  PointCloud cloud;
  std::vector<Keypoint> keypoints;
  double diameter = 0.0;
  SymmetryDescriptor symmetry;

  std::size_t num_keypoints() const { return keypoints.size(); }
  bool is_symmetric() const { return symmetry.kind != SymmetryDescriptor::Kind::kNone; }
};

inline double model_diameter(const PointCloud& cloud) {
  if (cloud.empty()) throw Error(ErrorCode::kInvalidArgument, "model_diameter: empty cloud");
  Vec3 lo = cloud.points.front().position, hi = lo;
  for (const auto& p : cloud.points) {
    lo = lo.cwiseMin(p.position);
    hi = hi.cwiseMax(p.position);
  }
  return (hi - lo).norm();
}

/// Voxel-grid keypoints snapped to the nearest real surface point, then thinned
/// so that no two keypoints are closer than `min_separation` x spacing. Partial
/// voxels on curved surfaces otherwise yield roughly twice area/spacing^2.
inline std::vector<Keypoint> sample_keypoints(const PointCloud& model_cloud, double spacing = 25.0,
                                              double min_separation = 0.7) {
  if (model_cloud.empty()) throw Error(ErrorCode::kInvalidArgument, "sample_keypoints: empty cloud");
  if (!model_cloud.has_normals) {
    throw Error(ErrorCode::kInvalidArgument, "sample_keypoints: model cloud needs normals");
  }
  const auto positions = model_cloud.positions();
  const NNIndex index(positions);
  const double min_sep2 = min_separation * min_separation * spacing * spacing;
  std::vector<Keypoint> out;
  for (const auto& group : voxel_groups(positions, spacing)) {
    Vec3 c = Vec3::Zero();
    for (auto id : group) c += positions[id];
    c /= static_cast<double>(group.size());
    const auto nn = index.nearest(c);
    const Point& snap = model_cloud.points[nn.id];
    bool too_close = false;
    for (const auto& k : out) {
      if ((k.position - snap.position).squaredNorm() < min_sep2) {
        too_close = true;
        break;
      }
    }
    if (!too_close) out.push_back({snap.position, snap.normal});
  }
  return out;
}

/// Collapses keypoints that a symmetry maps onto one another. Cyclic: a
/// keypoint is dropped when one of its n-1 orbit images (or itself) lands
/// within tol of an already kept keypoint. Revolution: keypoints are grouped by
/// (axial coordinate, radius) and each group becomes its projection on the axis.
inline std::vector<Keypoint> reduce_symmetric_keypoints(const std::vector<Keypoint>& keypoints,
                                                        const SymmetryDescriptor& sym, double tol) {
  if (!(tol > 0)) throw Error(ErrorCode::kInvalidArgument, "symmetry tolerance must be positive");
  const double tol2 = tol * tol;
  std::vector<Keypoint> kept;
  switch (sym.kind) {
    case SymmetryDescriptor::Kind::kNone:
      return keypoints;
    case SymmetryDescriptor::Kind::kCyclic: {
      std::vector<Mat3> rots;
      for (int j = 0; j < sym.fold; ++j) rots.push_back(axis_angle(sym.axis, 2.0 * kPi * j / sym.fold));
      for (const auto& kp : keypoints) {
        bool merged = false;
        for (const auto& r : rots) {
          const Vec3 img = sym.center + r * (kp.position - sym.center);
          for (const auto& k : kept) {
            if ((img - k.position).squaredNorm() <= tol2) {
              merged = true;
              break;
            }
          }
          if (merged) break;
        }
        if (!merged) kept.push_back(kp);
      }
      return kept;
    }
    case SymmetryDescriptor::Kind::kRevolution: {
      std::vector<Eigen::Vector2d> classes;  // (axial, radius)
      for (const auto& kp : keypoints) {
        const Vec3 d = kp.position - sym.center;
        const double h = d.dot(sym.axis);
        const Eigen::Vector2d cls(h, (d - h * sym.axis).norm());
        bool merged = false;
        for (const auto& c : classes) {
          if ((c - cls).squaredNorm() <= tol2) {
            merged = true;
            break;
          }
        }
        if (merged) continue;
        classes.push_back(cls);
        // Distinct radii at one height still share an axis point.
        const Vec3 on_axis = sym.center + h * sym.axis;
        bool duplicate = false;
        for (const auto& k : kept) {
          if ((k.position - on_axis).squaredNorm() <= tol2) {
            duplicate = true;
            break;
          }
        }
        if (!duplicate) kept.push_back({on_axis, kp.normal});
      }
      return kept;
    }
  }
  return kept;
}

/// Label in 1..K of the nearest keypoint for every position; ties go to the
/// lowest keypoint index.
inline std::vector<int> nearest_keypoint_labels(std::span<const Vec3> positions,
                                                const std::vector<Keypoint>& keypoints) {
  if (keypoints.empty()) throw Error(ErrorCode::kInvalidArgument, "no keypoints");
  std::vector<Vec3> kp;
  for (const auto& k : keypoints) kp.push_back(k.position);
  const NNIndex index(std::move(kp), 4);
  std::vector<int> labels;
  labels.reserve(positions.size());
  for (const auto& p : positions) labels.push_back(static_cast<int>(index.nearest(p).id) + 1);
  return labels;
}

inline std::vector<int> nearest_keypoint_labels(const PointCloud& cloud, const std::vector<Keypoint>& keypoints) {
  const auto pos = cloud.positions();
  return nearest_keypoint_labels(std::span<const Vec3>(pos), keypoints);
}

inline ObjectModel make_object_model(PointCloud cloud, double spacing = 25.0,
                                     SymmetryDescriptor symmetry = SymmetryDescriptor::none(),
                                     double symmetry_tol = 0.0) {
  ObjectModel model;
  model.diameter = model_diameter(cloud);
  if (!(model.diameter > 0)) throw Error(ErrorCode::kInvalidArgument, "degenerate model (zero diameter)");
  model.keypoints = reduce_symmetric_keypoints(sample_keypoints(cloud, spacing), symmetry,
                                               symmetry_tol > 0 ? symmetry_tol : 0.5 * spacing);
  model.cloud = std::move(cloud);
  model.symmetry = symmetry;
  return model;
}

/// Mesh to dense cloud. Vertices are used as-is unless they are sparser than
/// 2 points per spacing^2 of surface, in which case faces are sampled
/// uniformly at 4 points per spacing^2 with face normals.
inline PointCloud mesh_to_cloud(const PlyMesh& mesh, double spacing, Rng& rng) {
  double area = 0.0;
  std::vector<double> face_area;
  for (const auto& f : mesh.faces) {
    const Vec3& a = mesh.cloud.points[f[0]].position;
    const Vec3& b = mesh.cloud.points[f[1]].position;
    const Vec3& c = mesh.cloud.points[f[2]].position;
    face_area.push_back(0.5 * (b - a).cross(c - a).norm());
    area += face_area.back();
  }
  const double cells = area / (spacing * spacing);
  const bool sparse = !mesh.faces.empty() && static_cast<double>(mesh.cloud.size()) < 2.0 * cells;
  if (!sparse) {
    PointCloud cloud = mesh.cloud;
    if (!cloud.has_normals && !mesh.faces.empty()) {
      // Area-weighted vertex normals from adjacent faces.
      std::vector<Vec3> acc(cloud.size(), Vec3::Zero());
      for (const auto& f : mesh.faces) {
        const Vec3 n = (cloud.points[f[1]].position - cloud.points[f[0]].position)
                           .cross(cloud.points[f[2]].position - cloud.points[f[0]].position);
        for (auto v : f) acc[v] += n;
      }
      for (std::size_t i = 0; i < cloud.size(); ++i) {
        cloud.points[i].normal = acc[i].norm() > 0 ? Vec3(acc[i].normalized()) : Vec3::UnitZ();
      }
      cloud.has_normals = true;
    }
    return cloud;
  }
  PointCloud out = mesh.cloud.empty_like();
  out.has_normals = true;
  const auto total = static_cast<std::size_t>(std::ceil(4.0 * cells));
  std::discrete_distribution<std::size_t> pick(face_area.begin(), face_area.end());
  for (std::size_t i = 0; i < total; ++i) {
    const auto& f = mesh.faces[pick(rng)];
    const Point& a = mesh.cloud.points[f[0]];
    const Point& b = mesh.cloud.points[f[1]];
    const Point& c = mesh.cloud.points[f[2]];
    double u = uniform(rng, 0, 1), v = uniform(rng, 0, 1);
    if (u + v > 1) {
      u = 1 - u;
      v = 1 - v;
    }
    Point p;
    p.position = a.position + u * (b.position - a.position) + v * (c.position - a.position);
    p.normal = (b.position - a.position).cross(c.position - a.position).normalized();
    p.color = a.color + u * (b.color - a.color) + v * (c.color - a.color);
    out.points.push_back(p);
  }
  return out;
}

// Sidecar JSON: {"keypoints": [{"position": [..], "normal": [..]}], "diameter_mm": d,
//                "symmetry": {"kind": "none"|"cyclic"|"revolution", "fold": n, "axis": [..], "center": [..]}}

inline nlohmann::json symmetry_to_json(const SymmetryDescriptor& s) {
  using K = SymmetryDescriptor::Kind;
  nlohmann::json j;
  j["kind"] = s.kind == K::kNone ? "none" : s.kind == K::kCyclic ? "cyclic" : "revolution";
  if (s.kind == K::kCyclic) j["fold"] = s.fold;
  if (s.kind != K::kNone) {
    j["axis"] = {s.axis.x(), s.axis.y(), s.axis.z()};
    j["center"] = {s.center.x(), s.center.y(), s.center.z()};
  }
  return j;
}

inline Vec3 vec3_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorCode::kParse, "expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline SymmetryDescriptor symmetry_from_json(const nlohmann::json& j) {
  const std::string kind = j.value("kind", "none");
  if (kind == "none") return SymmetryDescriptor::none();
  const Vec3 axis = vec3_from_json(j.at("axis"));
  const Vec3 center = j.contains("center") ? vec3_from_json(j.at("center")) : Vec3::Zero();
  if (kind == "cyclic") return SymmetryDescriptor::cyclic(j.at("fold").get<int>(), axis, center);
  if (kind == "revolution") return SymmetryDescriptor::revolution(axis, center);
  throw Error(ErrorCode::kParse, "unknown symmetry kind '" + kind + "'");
}

inline std::string model_sidecar_path(const std::string& ply_path) {
  return std::filesystem::path(ply_path).replace_extension(".json").string();
}

inline void save_model(const std::string& ply_path, const ObjectModel& model) {
  write_ply(ply_path, model.cloud, true);
  nlohmann::json j;
  j["diameter_mm"] = model.diameter;
  j["symmetry"] = symmetry_to_json(model.symmetry);
  j["keypoints"] = nlohmann::json::array();
  for (const auto& k : model.keypoints) {
    j["keypoints"].push_back({{"position", {k.position.x(), k.position.y(), k.position.z()}},
                              {"normal", {k.normal.x(), k.normal.y(), k.normal.z()}}});
  }
  std::ofstream out(model_sidecar_path(ply_path));
  if (!out) throw Error(ErrorCode::kIo, "cannot write model sidecar for " + ply_path);
  out << j.dump(2) << '\n';
}

/// Loads a model PLY and its sidecar. Without a sidecar, keypoints are sampled
/// at `spacing` and the model is treated as asymmetric. `symmetry_tol` <= 0
/// means half the spacing.
inline ObjectModel load_model(const std::string& ply_path, double spacing = 25.0, double symmetry_tol = 0.0) {
  if (!std::filesystem::exists(ply_path)) throw Error(ErrorCode::kIo, "model file not found: " + ply_path);
  PlyMesh mesh = read_ply_mesh(ply_path);
  Rng rng(0);
  PointCloud cloud = mesh.faces.empty() ? mesh.cloud : mesh_to_cloud(mesh, spacing, rng);
  const std::string sidecar = model_sidecar_path(ply_path);
  if (!std::filesystem::exists(sidecar)) return make_object_model(std::move(cloud), spacing);
  std::ifstream in(sidecar);
  try {
    nlohmann::json j;
    in >> j;
    ObjectModel model;
    model.cloud = std::move(cloud);
    model.diameter = j.contains("diameter_mm") ? j.at("diameter_mm").get<double>() : model_diameter(model.cloud);
    model.symmetry = j.contains("symmetry") ? symmetry_from_json(j.at("symmetry")) : SymmetryDescriptor::none();
    if (j.contains("keypoints")) {
      for (const auto& k : j.at("keypoints")) {
        model.keypoints.push_back({vec3_from_json(k.at("position")), vec3_from_json(k.at("normal")).normalized()});
      }
    } else {
      model.keypoints = reduce_symmetric_keypoints(sample_keypoints(model.cloud, spacing), model.symmetry,
                                                   symmetry_tol > 0 ? symmetry_tol : 0.5 * spacing);
    }
    if (model.keypoints.empty()) throw Error(ErrorCode::kParse, "model sidecar has no keypoints");
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, sidecar + ": " + e.what());
  }
}

}  // namespace pointvote
