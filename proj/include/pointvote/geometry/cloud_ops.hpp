#pragma once

#include <array>
#include <cmath>
#include <unordered_map>
#include <vector>

#include <Eigen/Eigenvalues>

#include "pointvote/common.hpp"
#include "pointvote/geometry/nn_index.hpp"
#include "pointvote/geometry/point_cloud.hpp"

namespace pointvote {

using VoxelKey = std::array<std::int64_t, 3>;

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& k) const noexcept {
    std::uint64_t h = mix_seed(static_cast<std::uint64_t>(k[0]), 0);
    h = mix_seed(h ^ static_cast<std::uint64_t>(k[1]), 1);
    h = mix_seed(h ^ static_cast<std::uint64_t>(k[2]), 2);
    return static_cast<std::size_t>(h);
  }
};

// floor() puts boundary points into the higher-index voxel.
inline VoxelKey voxel_of(const Vec3& p, double leaf) {
  return {static_cast<std::int64_t>(std::floor(p.x() / leaf)),
          static_cast<std::int64_t>(std::floor(p.y() / leaf)),
          static_cast<std::int64_t>(std::floor(p.z() / leaf))};
}

/// Groups point ids by voxel; voxels are listed in order of first occurrence.
inline std::vector<std::vector<std::size_t>> voxel_groups(std::span<const Vec3> positions,
                                                          double leaf) {
  if (!(leaf > 0.0)) throw Error(ErrorCode::kInvalidArgument, "voxel leaf must be positive");
  std::unordered_map<VoxelKey, std::size_t, VoxelKeyHash> slot;
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < positions.size(); ++i) {
    auto [it, inserted] = slot.try_emplace(voxel_of(positions[i], leaf), groups.size());
    if (inserted) groups.emplace_back();
    groups[it->second].push_back(i);
  }
  return groups;
}

/// One centroid per occupied voxel; all present channels are averaged and
/// normals re-normalized.
inline PointCloud voxel_downsample(const PointCloud& cloud, double leaf) {
  if (!(leaf > 0.0)) throw Error(ErrorCode::kInvalidArgument, "voxel leaf must be positive");
  std::vector<Vec3> pos = cloud.positions();
  PointCloud out = cloud.empty_like();
  for (const auto& group : voxel_groups(pos, leaf)) {
    Point acc;
    for (std::size_t id : group) {
      const Point& p = cloud.points[id];
      acc.position += p.position;
      acc.normal += p.normal;
      acc.curvature += p.curvature;
      acc.color += p.color;
    }
    const double n = static_cast<double>(group.size());
    acc.position /= n;
    acc.curvature /= n;
    acc.color /= n;
    if (cloud.has_normals) {
      const double len = acc.normal.norm();
      acc.normal = len > 1e-12 ? Vec3(acc.normal / len) : cloud.points[group.front()].normal;
    } else {
      acc.normal.setZero();
    }
    out.points.push_back(acc);
  }
  return out;
}

/// PCA normals over a radius neighborhood, oriented toward `viewpoint`.
/// Neighborhoods with fewer than 3 points (self included) get the unit vector
/// toward the viewpoint and zero curvature.
inline PointCloud estimate_normals(const PointCloud& cloud, double radius, const Vec3& viewpoint,
                                   const NNIndex* prebuilt = nullptr) {
  if (!(radius > 0.0)) throw Error(ErrorCode::kInvalidArgument, "normal radius must be positive");
  NNIndex local;
  if (prebuilt == nullptr) {
    local = NNIndex(cloud);
    prebuilt = &local;
  }
  PointCloud out = cloud;
  out.has_normals = true;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    Point& pt = out.points[i];
    const Vec3 to_view = viewpoint - pt.position;
    const auto nbrs = prebuilt->radius_search(pt.position, radius);
    if (nbrs.size() < 3) {
      const double len = to_view.norm();
      pt.normal = len > 0 ? Vec3(to_view / len) : Vec3::UnitZ();
      pt.curvature = 0.0;
      continue;
    }
    Vec3 mean = Vec3::Zero();
    for (auto j : nbrs) mean += cloud.points[j].position;
    mean /= static_cast<double>(nbrs.size());
    Mat3 cov = Mat3::Zero();
    for (auto j : nbrs) {
      const Vec3 d = cloud.points[j].position - mean;
      cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
    const Vec3 lambda = eig.eigenvalues().cwiseMax(0.0);
    Vec3 n = eig.eigenvectors().col(0).normalized();
    if (n.dot(to_view) < 0) n = -n;
    pt.normal = n;
    const double sum = lambda.sum();
    pt.curvature = sum > 0 ? lambda(0) / sum : 0.0;
  }
  return out;
}

}  // namespace pointvote
