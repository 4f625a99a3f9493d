#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "pointvote/geometry/cloud_ops.hpp"
#include "pointvote/geometry/point_cloud.hpp"
#include "pointvote/geometry/rigid.hpp"
#include "pointvote/model.hpp"

namespace pointvote {

// Synthetic tabletop scenes seen by a virtual pinhole camera. World frame:
// table plane z = 0, +z up. Output clouds are in the camera frame.

struct SynthParams {
  double noise_sigma = 2.0;   // mm, isotropic position noise
  double color_noise = 0.02;  // per channel
  int clutter_count = 3;
  double occluder_prob = 0.0;
  double table_half = 350.0;  // mm
  double placement_radius = 80.0;  // object centre offset from the table centre
  double camera_distance = 700.0;
  double elevation_min = 35.0;  // deg above the table
  double elevation_max = 75.0;
  Intrinsics camera{300.0, 300.0, 160.0, 120.0, 320, 240};
  double self_occlusion_tol = 5.0;  // mm
  bool estimate_normals = true;
  double normal_radius = 12.0;  // mm

  void validate() const {
    if (noise_sigma < 0 || color_noise < 0 || clutter_count < 0 || occluder_prob < 0 || occluder_prob > 1 ||
        !(table_half > 0) || !(camera_distance > 0) || elevation_min > elevation_max || camera.width <= 0 ||
        camera.height <= 0 || !(camera.fx > 0) || !(camera.fy > 0) || !(normal_radius > 0)) {
      throw Error(ErrorCode::kConfig, "invalid synthetic scene parameters");
    }
  }
};

struct SyntheticScene {
  PointCloud cloud;                 // camera frame, with intrinsics and color
  RigidPose gt_pose;                // model -> camera
  RigidPose camera_from_world;
  std::vector<int> source;          // per point: surface sample id, or -1
  std::size_t visible_model_points = 0;
  std::uint64_t seed = 0;           // set by the seeded overload
};

/// Dense surface samples for rendering plus the thinned model built from them.
struct DemoObject {
  PointCloud surface;
  ObjectModel model;
};

namespace detail {

struct Box {
  Vec3 lo, hi;
};

inline bool strictly_inside(const Box& b, const Vec3& p, double eps = 0.1) {
  return (p.array() > b.lo.array() + eps).all() && (p.array() < b.hi.array() - eps).all();
}

inline void sample_box(PointCloud& c, const Box& b, double density, Rng& rng, int part) {
  for (int axis = 0; axis < 3; ++axis) {
    const int u = (axis + 1) % 3, v = (axis + 2) % 3;
    const double area = (b.hi[u] - b.lo[u]) * (b.hi[v] - b.lo[v]);
    const auto n = static_cast<int>(std::lround(area * density));
    for (int side = 0; side < 2; ++side) {
      for (int i = 0; i < n; ++i) {
        Point p;
        p.position[axis] = side ? b.hi[axis] : b.lo[axis];
        p.position[u] = uniform(rng, b.lo[u], b.hi[u]);
        p.position[v] = uniform(rng, b.lo[v], b.hi[v]);
        p.normal = Vec3::Zero();
        p.normal[axis] = side ? 1.0 : -1.0;
        p.curvature = part;  // temporary part tag
        c.points.push_back(p);
      }
    }
  }
}

inline Vec3 demo_texture(const Vec3& p, int part) {
  static const Vec3 tint[3] = {{0.85, 0.35, 0.2}, {0.2, 0.45, 0.85}, {0.9, 0.8, 0.25}};
  const Vec3 q = p / 35.0 * 2.0 * kPi;
  const Vec3 wave(0.5 + 0.5 * std::sin(q.x() + 0.4 * q.z()), 0.5 + 0.5 * std::sin(q.y() - 0.3 * q.x() + 1.0),
                  0.5 + 0.5 * std::cos(q.z() + 0.5 * q.y()));
  return (0.6 * tint[part] + 0.4 * wave).cwiseMax(0.0).cwiseMin(1.0);
}

}  // namespace detail

/// Asymmetric textured object: a slab with a tower on one corner and a
/// cylindrical knob. About 100 x 70 x 65 mm, origin near its middle.
inline DemoObject make_demo_object(double surface_spacing = 1.0, double model_voxel = 3.0,
                                   double keypoint_spacing = 25.0, std::uint64_t seed = 7) {
  Rng rng(seed);
  const double density = 1.0 / (surface_spacing * surface_spacing);
  const detail::Box base{{-50, -35, -25}, {50, 35, 0}};
  const detail::Box tower{{10, 0, 0}, {50, 35, 40}};
  const Vec3 knob_c(-25, -10, 0);
  const double knob_r = 12.0, knob_h = 25.0;

  PointCloud raw;
  detail::sample_box(raw, base, density, rng, 0);
  detail::sample_box(raw, tower, density, rng, 1);
  const auto n_side = static_cast<int>(std::lround(2 * kPi * knob_r * knob_h * density));
  for (int i = 0; i < n_side; ++i) {
    const double a = uniform(rng, 0, 2 * kPi);
    Point p;
    p.normal = Vec3(std::cos(a), std::sin(a), 0);
    p.position = knob_c + knob_r * p.normal + Vec3(0, 0, uniform(rng, 0, knob_h));
    p.curvature = 2;
    raw.points.push_back(p);
  }
  const auto n_cap = static_cast<int>(std::lround(kPi * knob_r * knob_r * density));
  for (int i = 0; i < n_cap; ++i) {
    const double a = uniform(rng, 0, 2 * kPi), r = knob_r * std::sqrt(uniform(rng, 0, 1));
    Point p;
    p.position = knob_c + Vec3(r * std::cos(a), r * std::sin(a), knob_h);
    p.normal = Vec3::UnitZ();
    p.curvature = 2;
    raw.points.push_back(p);
  }

  DemoObject out;
  out.surface.has_normals = true;
  out.surface.has_color = true;
  for (auto p : raw.points) {
    const int part = static_cast<int>(p.curvature);
    const Vec3 kd = p.position - knob_c;
    const bool in_knob = std::hypot(kd.x(), kd.y()) < knob_r - 0.1 && kd.z() > 0.1 && kd.z() < knob_h - 0.1;
    if ((part != 0 && detail::strictly_inside(base, p.position)) ||
        (part != 1 && detail::strictly_inside(tower, p.position)) || (part != 2 && in_knob)) {
      continue;
    }
    // Faces shared with another part lie inside the union.
    if (part == 0 && p.normal.z() > 0.5 && p.position.x() > 10 && p.position.y() > 0) continue;
    if (part == 1 && p.normal.z() < -0.5) continue;
    if (part == 0 && p.normal.z() > 0.5 && std::hypot(kd.x(), kd.y()) < knob_r) continue;
    p.curvature = 0.0;
    p.color = detail::demo_texture(p.position, part);
    out.surface.points.push_back(p);
  }
  out.model = make_object_model(voxel_downsample(out.surface, model_voxel), keypoint_spacing);
  return out;
}

namespace detail {

struct Primitive {
  enum class Kind { kBox, kSphere } kind = Kind::kBox;
  RigidPose world_from_local;  // boxes: centred, axis-aligned in local frame
  Vec3 half = Vec3::Zero();    // box half extents
  double radius = 0.0;         // sphere
  Vec3 color = Vec3::Constant(0.5);
};

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  Vec3 normal = Vec3::Zero();
  Vec3 color = Vec3::Zero();
};

// Ray o + t d, t > 0.
inline void intersect(const Primitive& p, const Vec3& o, const Vec3& d, Hit& best) {
  const Mat3& r = p.world_from_local.rotation;
  const Vec3 lo = r.transpose() * (o - p.world_from_local.translation);
  const Vec3 ld = r.transpose() * d;
  if (p.kind == Primitive::Kind::kSphere) {
    const double b = lo.dot(ld), a = ld.squaredNorm(), c = lo.squaredNorm() - p.radius * p.radius;
    const double disc = b * b - a * c;
    if (disc < 0) return;
    const double t = (-b - std::sqrt(disc)) / a;
    if (t > 1e-9 && t < best.t) best = {t, r * (lo + t * ld).normalized(), p.color};
    return;
  }
  double t0 = -std::numeric_limits<double>::infinity(), t1 = std::numeric_limits<double>::infinity();
  int axis = -1;
  for (int k = 0; k < 3; ++k) {
    if (std::abs(ld[k]) < 1e-15) {
      if (std::abs(lo[k]) > p.half[k]) return;
      continue;
    }
    double a = (-p.half[k] - lo[k]) / ld[k], b = (p.half[k] - lo[k]) / ld[k];
    if (a > b) std::swap(a, b);
    if (a > t0) {
      t0 = a;
      axis = k;
    }
    t1 = std::min(t1, b);
  }
  if (axis < 0 || t0 > t1 || t0 <= 1e-9 || t0 >= best.t) return;
  Vec3 n = Vec3::Zero();
  n[axis] = ld[axis] > 0 ? -1.0 : 1.0;
  best = {t0, r * n, p.color};
}

inline RigidPose look_at(const Vec3& eye, const Vec3& target) {
  const Vec3 z = (target - eye).normalized();
  Vec3 x = z.cross(Vec3::UnitZ());
  if (x.norm() < 1e-9) x = Vec3::UnitX();
  x.normalize();
  const Vec3 y = z.cross(x);
  RigidPose camera_from_world;
  camera_from_world.rotation.row(0) = x;
  camera_from_world.rotation.row(1) = y;
  camera_from_world.rotation.row(2) = z;
  camera_from_world.translation = -(camera_from_world.rotation * eye);
  return camera_from_world;
}

inline Vec3 random_color(Rng& rng) { return Vec3(uniform(rng, 0.1, 0.9), uniform(rng, 0.1, 0.9), uniform(rng, 0.1, 0.9)); }

}  // namespace detail

/// One resting orientation per axis-aligned face, then a random yaw.
inline Mat3 random_resting_rotation(Rng& rng) {
  static const Mat3 faces[6] = {Mat3::Identity(),
                                axis_angle(Vec3::UnitX(), kPi),
                                axis_angle(Vec3::UnitX(), kPi / 2),
                                axis_angle(Vec3::UnitX(), -kPi / 2),
                                axis_angle(Vec3::UnitY(), kPi / 2),
                                axis_angle(Vec3::UnitY(), -kPi / 2)};
  return axis_angle(Vec3::UnitZ(), uniform(rng, -kPi, kPi)) * faces[uniform_index(rng, 6)];
}

/// Renders the object (dense colored surface samples) resting on a table
/// with clutter, adds noise, and estimates normals.
inline SyntheticScene synth_scene(const PointCloud& surface, double diameter, Rng& rng, const SynthParams& sp = {}) {
  sp.validate();
  if (surface.empty()) throw Error(ErrorCode::kInvalidArgument, "synth_scene: empty object surface");
  SyntheticScene out;

  // Object pose in the world: resting on the table.
  RigidPose world_from_model;
  world_from_model.rotation = random_resting_rotation(rng);
  double min_z = std::numeric_limits<double>::infinity();
  for (const auto& p : surface.points) min_z = std::min(min_z, (world_from_model.rotation * p.position).z());
  const double a = uniform(rng, 0, 2 * kPi), r = sp.placement_radius * std::sqrt(uniform(rng, 0, 1));
  world_from_model.translation = Vec3(r * std::cos(a), r * std::sin(a), -min_z);
  const Vec3 obj_xy(world_from_model.translation.x(), world_from_model.translation.y(), 0);

  // Camera looking at the object from above the table.
  const double az = uniform(rng, 0, 2 * kPi);
  const double el = deg2rad(uniform(rng, sp.elevation_min, sp.elevation_max));
  const Vec3 target = obj_xy + Vec3(uniform(rng, -30, 30), uniform(rng, -30, 30), 25.0);
  const Vec3 eye = target + sp.camera_distance * Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
  out.camera_from_world = detail::look_at(eye, target);
  out.gt_pose = out.camera_from_world.compose(world_from_model);

  // Clutter on the table away from the object, then an optional occluder
  // between camera and object.
  std::vector<detail::Primitive> prims;
  for (int i = 0; i < sp.clutter_count; ++i) {
    detail::Primitive p;
    p.color = detail::random_color(rng);
    const bool sphere = uniform(rng, 0, 1) < 0.35;
    const double size = uniform(rng, 20, 45);
    Vec3 c = Vec3::Zero();
    for (int tries = 0; tries < 50; ++tries) {
      c = Vec3(uniform(rng, -0.7, 0.7) * sp.table_half, uniform(rng, -0.7, 0.7) * sp.table_half, 0);
      if ((c - obj_xy).norm() > 0.6 * diameter + 1.5 * size) break;
    }
    if (sphere) {
      p.kind = detail::Primitive::Kind::kSphere;
      p.radius = size;
      p.world_from_local.translation = c + Vec3(0, 0, size);
    } else {
      p.half = Vec3(size, uniform(rng, 15, 45), uniform(rng, 15, 60));
      p.world_from_local.rotation = axis_angle(Vec3::UnitZ(), uniform(rng, -kPi, kPi));
      p.world_from_local.translation = c + Vec3(0, 0, p.half.z());
    }
    prims.push_back(p);
  }
  if (uniform(rng, 0, 1) < sp.occluder_prob) {
    const Vec3 to_cam = Vec3(eye.x(), eye.y(), 0) - obj_xy;
    const Vec3 fwd = to_cam.normalized();
    const Vec3 side = Vec3::UnitZ().cross(fwd);
    detail::Primitive p;
    p.color = detail::random_color(rng);
    p.half = Vec3(uniform(rng, 6, 12), uniform(rng, 0.2, 0.35) * diameter, uniform(rng, 0.5, 0.8) * diameter);
    const Vec3 c = obj_xy + fwd * (0.5 * diameter + uniform(rng, 30, 80)) +
                   side * (uniform(rng, 0, 1) < 0.5 ? -1 : 1) * uniform(rng, 0.15, 0.4) * diameter;
    p.world_from_local.rotation = axis_angle(Vec3::UnitZ(), std::atan2(fwd.y(), fwd.x()));
    p.world_from_local.translation = c + Vec3(0, 0, p.half.z());
    prims.push_back(p);
  }

  const auto& k = sp.camera;
  const std::size_t npix = static_cast<std::size_t>(k.width) * k.height;
  const double inf = std::numeric_limits<double>::infinity();

  // Model samples facing the camera: nearest per pixel, plus a 3x3
  // min-depth image that closes gaps between samples so farther surfaces
  // cannot show through. The acceptance slack grows with the sample's
  // grazing angle, since depth then changes quickly across one pixel.
  std::vector<double> model_depth(npix, inf), model_min(npix, inf), model_slack(npix, 0.0);
  std::vector<int> model_id(npix, -1);
  std::vector<Vec3> cam_pts(surface.size());
  for (std::size_t i = 0; i < surface.size(); ++i) {
    const Vec3 pc = out.gt_pose.apply(surface.points[i].position);
    cam_pts[i] = pc;
    if (!(pc.z() > 0)) continue;
    const double cos_view = -(out.gt_pose.rotation * surface.points[i].normal).dot(pc.normalized());
    if (cos_view <= 0) continue;
    const double tan_view = std::min(20.0, std::sqrt(std::max(0.0, 1.0 - cos_view * cos_view)) / cos_view);
    const long u = std::lround(k.fx * pc.x() / pc.z() + k.cx), v = std::lround(k.fy * pc.y() / pc.z() + k.cy);
    for (long dv = -1; dv <= 1; ++dv)
      for (long du = -1; du <= 1; ++du) {
        const long uu = u + du, vv = v + dv;
        if (uu < 0 || vv < 0 || uu >= k.width || vv >= k.height) continue;
        const std::size_t id = static_cast<std::size_t>(vv) * k.width + uu;
        model_min[id] = std::min(model_min[id], pc.z());
        if (du == 0 && dv == 0 && pc.z() < model_depth[id]) {
          model_depth[id] = pc.z();
          model_id[id] = static_cast<int>(i);
          model_slack[id] = 1.5 * pc.z() / k.fx * tan_view;
        }
      }
  }

  const RigidPose world_from_camera = out.camera_from_world.inverse();
  PointCloud& cloud = out.cloud;
  cloud.intrinsics = k;
  cloud.view_origin = Vec3::Zero();
  cloud.has_color = true;
  cloud.has_normals = true;
  const Vec3 table_color(0.62, 0.52, 0.4);
  for (int v = 0; v < k.height; ++v) {
    for (int u = 0; u < k.width; ++u) {
      const std::size_t id = static_cast<std::size_t>(v) * k.width + u;
      const Vec3 dc((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
      const Vec3 dw = world_from_camera.rotation * dc;
      detail::Hit hit;
      // Table plane, bounded.
      if (dw.z() < -1e-12) {
        const double t = -eye.z() / dw.z();
        const Vec3 p = eye + t * dw;
        if (std::abs(p.x()) <= sp.table_half && std::abs(p.y()) <= sp.table_half) {
          hit = {t, Vec3::UnitZ(), table_color};
        }
      }
      for (const auto& prim : prims) detail::intersect(prim, eye, dw, hit);
      const double scene_depth = hit.t;  // dc.z() == 1, so t is camera depth
      const double m = model_depth[id];
      const bool model_ok = model_id[id] >= 0 && m <= model_min[id] + sp.self_occlusion_tol + model_slack[id];
      Point pt;
      int src = -1;
      if (model_ok && m < scene_depth) {
        src = model_id[id];
        pt.position = cam_pts[static_cast<std::size_t>(src)];
        pt.normal = out.gt_pose.rotation * surface.points[static_cast<std::size_t>(src)].normal;
        pt.color = surface.points[static_cast<std::size_t>(src)].color;
      } else if (std::isfinite(scene_depth) && !(scene_depth > model_min[id] + sp.self_occlusion_tol)) {
        pt.position = scene_depth * dc;
        pt.normal = out.camera_from_world.rotation * hit.normal;
        pt.color = hit.color;
      } else {
        continue;
      }
      cloud.points.push_back(pt);
      out.source.push_back(src);
    }
  }

  for (std::size_t i = 0; i < cloud.size(); ++i) {
    auto& p = cloud.points[i];
    if (sp.noise_sigma > 0) {
      p.position += Vec3(gaussian(rng, sp.noise_sigma), gaussian(rng, sp.noise_sigma), gaussian(rng, sp.noise_sigma));
    }
    if (sp.color_noise > 0) {
      p.color += Vec3(gaussian(rng, sp.color_noise), gaussian(rng, sp.color_noise), gaussian(rng, sp.color_noise));
      p.color = p.color.cwiseMax(0.0).cwiseMin(1.0);
    }
    out.visible_model_points += out.source[i] >= 0;
  }
  if (sp.estimate_normals) cloud = estimate_normals(cloud, sp.normal_radius, Vec3::Zero());
  return out;
}

inline SyntheticScene synth_scene(const DemoObject& obj, Rng& rng, const SynthParams& sp = {}) {
  return synth_scene(obj.surface, obj.model.diameter, rng, sp);
}

/// Scene drawn from its own generator seeded with `seed`; the seed is kept.
inline SyntheticScene synth_scene(const DemoObject& obj, std::uint64_t seed, const SynthParams& sp = {}) {
  Rng rng(seed);
  auto s = synth_scene(obj, rng, sp);
  s.seed = seed;
  return s;
}

}  // namespace pointvote
