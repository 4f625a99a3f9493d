#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "pointvote/dataset.hpp"
#include "pointvote/geometry/cloud_ops.hpp"
#include "pointvote/geometry/rigid.hpp"
#include "pointvote/model.hpp"
#include "pointvote/network.hpp"

namespace pointvote {

// Pose from many-to-few point+normal correspondences. Each correspondence
// pins the keypoint onto the scene point and its normal onto the scene normal,
// leaving one rotational degree of freedom about the scene normal; sampling it
// gives votes in SE(3) whose densest cluster is the pose.

struct Correspondence {
  Vec3 scene_position = Vec3::Zero();
  Vec3 scene_normal = Vec3::UnitZ();
  int keypoint_id = 1;  // 1..K
  Vec3 keypoint_position = Vec3::Zero();
  Vec3 keypoint_normal = Vec3::UnitZ();
  double confidence = 1.0;
};

struct PoseHypothesis {
  RigidPose pose;
  double s_kde = 0.0;
  std::size_t vote_support = 0;
  double l_geometric = std::numeric_limits<double>::quiet_NaN();
  double l_color = std::numeric_limits<double>::quiet_NaN();
  double l_loc = std::numeric_limits<double>::quiet_NaN();
  bool color_fallback = false;
  int anchor = -1;  // index among the segmented anchors, if any
};

struct VotingParams {
  int n_theta = 36;
  double delta_t = 10.0;              // mm
  double delta_r = deg2rad(12.0);     // rad
  std::size_t min_correspondences = 10;
  std::size_t max_correspondences = 500;
  double min_confidence = 0.0;
};

inline Correspondence make_correspondence(const Vec3& p, const Vec3& n, int label, const ObjectModel& model,
                                          double confidence = 1.0) {
  const auto& kp = model.keypoints.at(static_cast<std::size_t>(label - 1));
  Correspondence c;
  c.scene_position = p;
  c.scene_normal = n.normalized();
  c.keypoint_id = label;
  c.keypoint_position = kp.position;
  c.keypoint_normal = kp.normal.normalized();
  c.confidence = confidence;
  return c;
}

/// Correspondences from known per-point labels (0 = background, skipped).
inline std::vector<Correspondence> correspondences_from_labels(const PointCloud& scene, std::span<const int> labels,
                                                               const ObjectModel& model) {
  std::vector<Correspondence> out;
  for (std::size_t i = 0; i < scene.size(); ++i) {
    if (labels[i] <= 0) continue;
    out.push_back(make_correspondence(scene.points[i].position, scene.points[i].normal, labels[i], model));
  }
  return out;
}

/// Per point: argmax over the K+1 logits; non-background winners with
/// softmax probability >= min_confidence become correspondences, at the
/// un-centered scene position.
inline std::vector<Correspondence> correspondences_from_segmentation(const LabeledExample& ex,
                                                                     const MatX<float>& seg_logits,
                                                                     const ObjectModel& model,
                                                                     double min_confidence = 0.0) {
  if (seg_logits.cols() != static_cast<Eigen::Index>(ex.size()) ||
      seg_logits.rows() != static_cast<Eigen::Index>(model.num_keypoints() + 1)) {
    throw Error(ErrorCode::kInvalidArgument, "segmentation output shape does not match example/model");
  }
  std::vector<Correspondence> out;
  for (Eigen::Index j = 0; j < seg_logits.cols(); ++j) {
    Eigen::Index best = 0;
    const float mx = seg_logits.col(j).maxCoeff(&best);
    if (best == 0) continue;
    double z = 0.0;
    for (Eigen::Index r = 0; r < seg_logits.rows(); ++r) z += std::exp(double(seg_logits(r, j)) - mx);
    const double prob = 1.0 / z;
    if (prob < min_confidence) continue;
    const auto& p = ex.points[static_cast<std::size_t>(j)];
    const Vec3 pos = Vec3(p.position[0], p.position[1], p.position[2]) + ex.meta.centroid;
    const Vec3 nrm(p.normal[0], p.normal[1], p.normal[2]);
    if (nrm.norm() < 1e-9) continue;
    out.push_back(make_correspondence(pos, nrm, static_cast<int>(best), model, prob));
  }
  return out;
}

/// Minimal rotation taking unit vector a onto unit vector b. Anti-parallel
/// inputs rotate by pi about normalize(b x e_x), or e_y if that degenerates.
inline Mat3 align_vectors(const Vec3& a, const Vec3& b) {
  const Vec3 c = a.cross(b);
  const double s = c.norm();
  const double d = a.dot(b);
  Mat3 r;
  if (s < 1e-12) {
    if (d > 0) return Mat3::Identity();
    Vec3 axis = b.cross(Vec3::UnitX());
    if (axis.norm() < 1e-6) axis = b.cross(Vec3::UnitY());
    r = axis_angle(axis.normalized(), kPi);
  } else {
    r = axis_angle(c / s, std::atan2(s, d));
  }
  // One small corrective rotation absorbs rounding in the first step.
  const Vec3 ra = r * a;
  const Vec3 c2 = ra.cross(b);
  const double s2 = c2.norm();
  if (s2 > 0) r = axis_angle(c2 / s2, std::atan2(s2, ra.dot(b))) * r;
  return r;
}

struct Vote {
  RigidPose pose;
  std::size_t correspondence = 0;
};

namespace detail {

// Unit component of v orthogonal to unit n; zero vector if v is (nearly)
// parallel to n.
inline Vec3 tangent_direction(const Vec3& v, const Vec3& n) {
  const Vec3 u = v - v.dot(n) * n;
  const double len = u.norm();
  return len > 1e-6 * std::max(1.0, v.norm()) ? Vec3(u / len) : Vec3::Zero();
}

inline Mat3 frame_from(const Vec3& n, const Vec3& u) {
  Mat3 f;
  f.col(0) = n;
  f.col(1) = u;
  f.col(2) = n.cross(u);
  return f;
}

}  // namespace detail

/// n_theta poses per correspondence, rotated by theta = 2 pi k / n_theta
/// about the scene normal through the scene point.
///
/// theta = 0 pairs the tangent direction towards the keypoint centroid
/// (model side) with the tangent direction towards the correspondence
/// centroid (scene side), so the vote set moves rigidly with the scene data.
/// Where either direction is undefined, theta = 0 is the minimal rotation
/// aligning the normals.
inline std::vector<Vote> pose_votes(std::span<const Correspondence> corr, int n_theta = 36) {
  if (n_theta < 4) throw Error(ErrorCode::kInvalidArgument, "pose_votes: n_theta must be >= 4");
  Vec3 scene_center = Vec3::Zero(), model_center = Vec3::Zero();
  for (const auto& c : corr) {
    scene_center += c.scene_position;
    model_center += c.keypoint_position;
  }
  if (!corr.empty()) {
    scene_center /= static_cast<double>(corr.size());
    model_center /= static_cast<double>(corr.size());
  }
  std::vector<Vote> votes;
  votes.reserve(corr.size() * static_cast<std::size_t>(n_theta));
  for (std::size_t i = 0; i < corr.size(); ++i) {
    const auto& c = corr[i];
    const Vec3 ns = c.scene_normal.normalized();
    const Vec3 nm = c.keypoint_normal.normalized();
    const Vec3 us = detail::tangent_direction(scene_center - c.scene_position, ns);
    const Vec3 um = detail::tangent_direction(model_center - c.keypoint_position, nm);
    Mat3 base;
    if (us.isZero() || um.isZero()) {
      base = align_vectors(nm, ns);
    } else {
      base = project_to_so3(detail::frame_from(ns, us) * detail::frame_from(nm, um).transpose());
      base = align_vectors(base * nm, ns) * base;
    }
    for (int k = 0; k < n_theta; ++k) {
      Vote v;
      v.pose.rotation = axis_angle(ns, 2.0 * kPi * k / n_theta) * base;
      v.pose.translation = c.scene_position - v.pose.rotation * c.keypoint_position;
      v.correspondence = i;
      votes.push_back(v);
    }
  }
  return votes;
}

struct DensityPeak {
  PoseHypothesis hypothesis;
  std::size_t peak_vote = 0;
  std::vector<std::size_t> support;  // vote indices, ascending
};

namespace detail {

// Rotation distance <= delta  <=>  trace(Ra^T Rb) >= 1 + 2 cos(delta).
inline double rotation_trace(const Mat3& a, const Mat3& b) { return (a.array() * b.array()).sum(); }

inline DensityPeak finish_peak(std::span<const Vote> votes, std::size_t best, std::vector<std::size_t> support) {
  DensityPeak out;
  out.peak_vote = best;
  Vec3 t = Vec3::Zero();
  Mat3 r = Mat3::Zero();
  for (auto j : support) {
    t += votes[j].pose.translation;
    r += votes[j].pose.rotation;
  }
  out.hypothesis.pose.translation = t / static_cast<double>(support.size());
  out.hypothesis.pose.rotation = project_to_so3(r);
  out.hypothesis.vote_support = support.size();
  out.hypothesis.s_kde = static_cast<double>(support.size()) / static_cast<double>(votes.size());
  out.support = std::move(support);
  return out;
}

}  // namespace detail

/// Vote with the most neighbors within delta_t (translation) and delta_r
/// (rotation geodesic), itself included. Ties: smaller summed translation
/// distance to its neighbors, then lower index. The hypothesis is the mean
/// translation and chordal-mean rotation of that neighborhood.
inline DensityPeak density_peak(std::span<const Vote> votes, double delta_t = 10.0,
                                double delta_r = deg2rad(12.0)) {
  if (votes.empty()) throw Error(ErrorCode::kNoHypothesis, "density_peak: no votes");
  if (!(delta_t > 0) || !(delta_r > 0)) throw Error(ErrorCode::kInvalidArgument, "density_peak: bad kernel");
  const std::size_t n = votes.size();

  // Votes sorted by voxel; each voxel is a contiguous run of a
  // structure-of-arrays copy so the neighbor loop vectorizes.
  std::vector<VoxelKey> keys(n);
  for (std::size_t i = 0; i < n; ++i) keys[i] = voxel_of(votes[i].pose.translation, delta_t);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });
  std::vector<double> soa(12 * n);
  double* tx = soa.data();
  double* ty = tx + n;
  double* tz = ty + n;
  double* rm = tz + n;  // 9 planes, row-major element r*3+c
  std::unordered_map<VoxelKey, std::pair<std::size_t, std::size_t>, VoxelKeyHash> runs;
  for (std::size_t s = 0; s < n; ++s) {
    const auto& v = votes[order[s]].pose;
    tx[s] = v.translation.x();
    ty[s] = v.translation.y();
    tz[s] = v.translation.z();
    for (int e = 0; e < 9; ++e) rm[e * n + s] = v.rotation(e / 3, e % 3);
    auto [it, fresh] = runs.try_emplace(keys[order[s]], s, s + 1);
    if (!fresh) it->second.second = s + 1;
  }

  const double dt2 = delta_t * delta_t;
  const double min_trace = 1.0 + 2.0 * std::cos(delta_r);
  const auto neighbors = [&](std::size_t i, auto&& visit) {
    const VoxelKey key = keys[i];
    for (int dx = -1; dx <= 1; ++dx)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dz = -1; dz <= 1; ++dz) {
          const auto it = runs.find(VoxelKey{key[0] + dx, key[1] + dy, key[2] + dz});
          if (it != runs.end()) visit(it->second.first, it->second.second);
        }
  };

  std::size_t best = 0, best_count = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& pi = votes[i].pose;
    const double px = pi.translation.x(), py = pi.translation.y(), pz = pi.translation.z();
    double r[9];
    for (int e = 0; e < 9; ++e) r[e] = pi.rotation(e / 3, e % 3);
    std::size_t count = 0;
    double dist = 0.0;
    neighbors(i, [&](std::size_t b, std::size_t e) {
      for (std::size_t s = b; s < e; ++s) {
        const double ax = tx[s] - px, ay = ty[s] - py, az = tz[s] - pz;
        const double d2 = ax * ax + ay * ay + az * az;
        double tr = 0.0;
        for (int k = 0; k < 9; ++k) tr += r[k] * rm[k * n + s];
        const bool in = (d2 <= dt2) & (tr >= min_trace);
        count += in;
        dist += in ? std::sqrt(d2) : 0.0;
      }
    });
    if (count > best_count || (count == best_count && dist < best_dist)) {
      best = i;
      best_count = count;
      best_dist = dist;
    }
  }

  std::vector<std::size_t> support;
  const auto& pb = votes[best].pose;
  neighbors(best, [&](std::size_t b, std::size_t e) {
    for (std::size_t s = b; s < e; ++s) {
      const auto& q = votes[order[s]].pose;
      if ((q.translation - pb.translation).squaredNorm() <= dt2 &&
          detail::rotation_trace(pb.rotation, q.rotation) >= min_trace) {
        support.push_back(order[s]);
      }
    }
  });
  std::sort(support.begin(), support.end());
  return detail::finish_peak(votes, best, std::move(support));
}

/// Deterministic uniform thinning: indices floor(i * n / m), i < m.
inline std::vector<std::size_t> stride_subsample(std::size_t n, std::size_t m) {
  std::vector<std::size_t> out;
  if (n <= m) {
    out.resize(n);
    std::iota(out.begin(), out.end(), 0);
    return out;
  }
  out.reserve(m);
  for (std::size_t i = 0; i < m; ++i) out.push_back(i * n / m);
  return out;
}

/// Votes, density peak, then a least-squares fit over the correspondences
/// behind the peak's supporting votes.
inline PoseHypothesis estimate_pose(std::span<const Correspondence> corr_in, const VotingParams& params = {}) {
  if (corr_in.size() < params.min_correspondences) {
    throw Error(ErrorCode::kNoHypothesis, "estimate_pose: " + std::to_string(corr_in.size()) + " correspondences, need " +
                                              std::to_string(params.min_correspondences));
  }
  std::vector<Correspondence> corr;
  for (auto i : stride_subsample(corr_in.size(), params.max_correspondences)) corr.push_back(corr_in[i]);
  const auto votes = pose_votes(corr, params.n_theta);
  auto peak = density_peak(votes, params.delta_t, params.delta_r);
  std::vector<std::size_t> used;
  for (auto v : peak.support) used.push_back(votes[v].correspondence);
  std::sort(used.begin(), used.end());
  used.erase(std::unique(used.begin(), used.end()), used.end());
  if (used.size() >= 3) {
    std::vector<Vec3> src, dst;
    for (auto i : used) {
      src.push_back(corr[i].keypoint_position);
      dst.push_back(corr[i].scene_position);
    }
    try {
      peak.hypothesis.pose = kabsch_align(src, dst);
    } catch (const Error&) {
      // Collinear or coincident keypoints: keep the vote mean.
    }
  }
  return peak.hypothesis;
}

}  // namespace pointvote
