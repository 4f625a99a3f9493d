#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "pointvote/geometry/nn_index.hpp"
#include "pointvote/geometry/point_cloud.hpp"
#include "pointvote/geometry/rigid.hpp"
#include "pointvote/model.hpp"
#include "pointvote/voting.hpp"

namespace pointvote {

// Scene clouds with intrinsics are expressed in the camera frame (+z forward).

struct VerificationParams {
  double occlusion_margin = 5.0;  // mm
  int splat_radius = 2;           // pixels
  bool use_color = true;
};

inline constexpr double kInfiniteLoss = std::numeric_limits<double>::infinity();

/// Min-depth image of the scene; every point fills a (2r+1)^2 pixel block.
class DepthBuffer {
 public:
  DepthBuffer() = default;

  DepthBuffer(const PointCloud& scene, int splat_radius) {
    if (!scene.intrinsics) return;
    if (splat_radius < 0) throw Error(ErrorCode::kInvalidArgument, "splat radius must be >= 0");
    k_ = *scene.intrinsics;
    if (k_.width <= 0 || k_.height <= 0) throw Error(ErrorCode::kInvalidArgument, "intrinsics without image size");
    depth_.assign(static_cast<std::size_t>(k_.width) * k_.height, kInfiniteLoss);
    for (const auto& p : scene.points) {
      const auto px = project(p.position);
      if (!px) continue;
      const double z = p.position.z();
      for (int dv = -splat_radius; dv <= splat_radius; ++dv) {
        for (int du = -splat_radius; du <= splat_radius; ++du) {
          const int u = px->first + du, v = px->second + dv;
          if (u < 0 || v < 0 || u >= k_.width || v >= k_.height) continue;
          double& d = depth_[static_cast<std::size_t>(v) * k_.width + u];
          d = std::min(d, z);
        }
      }
    }
    valid_ = true;
  }

  bool valid() const { return valid_; }
  const Intrinsics& intrinsics() const { return k_; }

  /// Nearest pixel, unclipped; nullopt behind the camera.
  std::optional<std::pair<int, int>> project(const Vec3& p) const {
    if (!(p.z() > 0)) return std::nullopt;
    return std::pair<int, int>{static_cast<int>(std::lround(k_.fx * p.x() / p.z() + k_.cx)),
                               static_cast<int>(std::lround(k_.fy * p.y() / p.z() + k_.cy))};
  }

  /// Scene depth under p; nullopt outside the image or on empty pixels.
  std::optional<double> depth_at(const Vec3& p) const {
    const auto px = project(p);
    if (!px || px->first < 0 || px->second < 0 || px->first >= k_.width || px->second >= k_.height) {
      return std::nullopt;
    }
    const double d = depth_[static_cast<std::size_t>(px->second) * k_.width + px->first];
    if (std::isinf(d)) return std::nullopt;
    return d;
  }

 private:
  Intrinsics k_;
  std::vector<double> depth_;
  bool valid_ = false;
};

struct VisibleSet {
  std::vector<std::size_t> indices;  // into the input, ascending
  bool occlusion_skipped = false;    // scene had no intrinsics
};

/// Drops points lying more than `margin` behind the observed surface.
inline VisibleSet remove_occluded(std::span<const Vec3> points, const DepthBuffer& depth, double margin) {
  if (margin < 0) throw Error(ErrorCode::kInvalidArgument, "occlusion margin must be >= 0");
  VisibleSet out;
  out.indices.reserve(points.size());
  if (!depth.valid()) {
    out.occlusion_skipped = true;
    for (std::size_t i = 0; i < points.size(); ++i) out.indices.push_back(i);
    return out;
  }
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto d = depth.depth_at(points[i]);
    if (d && points[i].z() > *d + margin) continue;
    out.indices.push_back(i);
  }
  return out;
}

/// RMS distance from each point to its scene nearest neighbor.
inline double geometric_loss(std::span<const Vec3> visible, const NNIndex& scene) {
  if (visible.empty()) return kInfiniteLoss;
  double sum = 0.0;
  for (const auto& p : visible) {
    const double d = scene.nearest(p).distance;
    sum += d * d;
  }
  return std::sqrt(sum / static_cast<double>(visible.size()));
}

struct ColorLoss {
  double value = 1.0;
  bool fallback = false;  // color missing on either side; value is 1
};

/// RMS RGB distance between each point's color and the color of its
/// geometric scene nearest neighbor.
inline ColorLoss color_loss(std::span<const Vec3> visible, std::span<const Vec3> colors, const PointCloud& scene,
                            const NNIndex& scene_index, bool model_has_color) {
  if (!model_has_color || !scene.has_color) return {1.0, true};
  if (visible.empty()) return {kInfiniteLoss, false};
  double sum = 0.0;
  for (std::size_t i = 0; i < visible.size(); ++i) {
    const auto nn = scene_index.nearest(visible[i]);
    sum += (colors[i] - scene.points[nn.id].color).squaredNorm();
  }
  return {std::sqrt(sum / static_cast<double>(visible.size())), false};
}

inline double localization_loss(double l_geometric, double l_color, double s_kde) {
  if (!(s_kde > 0)) throw Error(ErrorCode::kInvalidHypothesis, "localization loss needs s_kde > 0");
  return l_geometric * l_color / s_kde;
}

/// Verification state shared by all hypotheses of one scene.
class SceneVerifier {
 public:
  SceneVerifier(const PointCloud& scene, VerificationParams params = {})
      : scene_(scene), index_(scene), depth_(scene, params.splat_radius), params_(params) {}

  const NNIndex& index() const { return index_; }
  const DepthBuffer& depth() const { return depth_; }
  const VerificationParams& params() const { return params_; }

  /// Visible model points (scene frame) and their colors under `pose`.
  void visible_model(const RigidPose& pose, const PointCloud& model_cloud, std::vector<Vec3>& pts,
                     std::vector<Vec3>& colors, bool* skipped = nullptr) const {
    std::vector<Vec3> all;
    all.reserve(model_cloud.size());
    for (const auto& p : model_cloud.points) all.push_back(pose.apply(p.position));
    const auto vis = remove_occluded(all, depth_, params_.occlusion_margin);
    if (skipped) *skipped = vis.occlusion_skipped;
    pts.clear();
    colors.clear();
    for (auto i : vis.indices) {
      pts.push_back(all[i]);
      colors.push_back(model_cloud.points[i].color);
    }
  }

  /// Fills l_geometric, l_color and l_loc. `model_cloud` defaults to the
  /// model's own cloud; callers may pass a thinned copy.
  PoseHypothesis verify(PoseHypothesis h, const ObjectModel& model, const PointCloud* model_cloud = nullptr) const {
    const PointCloud& cloud = model_cloud ? *model_cloud : model.cloud;
    std::vector<Vec3> pts, colors;
    visible_model(h.pose, cloud, pts, colors);
    h.l_geometric = geometric_loss(pts, index_);
    const auto lc = color_loss(pts, colors, scene_, index_, params_.use_color && cloud.has_color);
    h.l_color = lc.value;
    h.color_fallback = lc.fallback;
    h.l_loc = std::isinf(h.l_geometric) || std::isinf(h.l_color) ? kInfiniteLoss
                                                                  : localization_loss(h.l_geometric, h.l_color, h.s_kde);
    return h;
  }

 private:
  const PointCloud& scene_;
  NNIndex index_;
  DepthBuffer depth_;
  VerificationParams params_;
};

inline PoseHypothesis verify(const PoseHypothesis& h, const ObjectModel& model, const PointCloud& scene,
                             const VerificationParams& params = {}) {
  return SceneVerifier(scene, params).verify(h, model);
}

}  // namespace pointvote
