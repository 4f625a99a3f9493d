#pragma once

#include <optional>
#include <vector>

#include "pointvote/common.hpp"

namespace pointvote {

// Normal and curvature are always present or absent together; color is in [0,1].
struct Point {
  Vec3 position = Vec3::Zero();
  Vec3 normal = Vec3::Zero();
  double curvature = 0.0;
  Vec3 color = Vec3::Zero();
};

/// Pinhole camera; pixel (u, v) of camera-frame point (x, y, z) is
/// (fx*x/z + cx, fy*y/z + cy).
struct Intrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;

  bool operator==(const Intrinsics&) const = default;
};

struct PointCloud {
  std::vector<Point> points;
  bool has_normals = false;
  bool has_color = false;
  std::optional<Vec3> view_origin;
  std::optional<Intrinsics> intrinsics;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }

  std::vector<Vec3> positions() const {
    std::vector<Vec3> out;
    out.reserve(points.size());
    for (const auto& p : points) out.push_back(p.position);
    return out;
  }

  // Copy of the metadata and channel layout with no points.
  PointCloud empty_like() const {
    PointCloud out;
    out.has_normals = has_normals;
    out.has_color = has_color;
    out.view_origin = view_origin;
    out.intrinsics = intrinsics;
    return out;
  }
};

inline Vec3 centroid(const std::vector<Vec3>& pts) {
  Vec3 c = Vec3::Zero();
  for (const auto& p : pts) c += p;
  return pts.empty() ? c : Vec3(c / static_cast<double>(pts.size()));
}

}  // namespace pointvote
