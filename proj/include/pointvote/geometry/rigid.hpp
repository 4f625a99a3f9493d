#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Geometry>
#include <Eigen/SVD>

#include "pointvote/common.hpp"

namespace pointvote {

/// Element of SE(3): x -> rotation * x + translation, translation in mm.
struct RigidPose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidPose identity() { return {}; }

  Vec3 apply(const Vec3& x) const { return rotation * x + translation; }

  // (*this) o other
  RigidPose compose(const RigidPose& other) const {
    return {rotation * other.rotation, rotation * other.translation + translation};
  }

  RigidPose inverse() const {
    Mat3 rt = rotation.transpose();
    return {rt, -(rt * translation)};
  }

  bool is_valid(double tol = 1e-9) const {
    return (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
           std::abs(rotation.determinant() - 1.0) <= tol && translation.allFinite();
  }
};

inline std::vector<Vec3> transform_points(const RigidPose& pose, std::span<const Vec3> pts) {
  std::vector<Vec3> out;
  out.reserve(pts.size());
  for (const auto& p : pts) out.push_back(pose.apply(p));
  return out;
}

/// Angle of the relative rotation a^T b. Uses atan2(|skew|, trace-1), which
/// equals arccos((trace-1)/2) but keeps full precision near 0 and pi.
inline double rotation_geodesic(const Mat3& a, const Mat3& b) {
  Mat3 r = a.transpose() * b;
  Vec3 v(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  double angle = std::atan2(v.norm(), r.trace() - 1.0);
  return std::clamp(angle, 0.0, kPi);
}

/// Nearest rotation in the Frobenius sense.
inline Mat3 project_to_so3(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  Mat3 v = svd.matrixV();
  Mat3 d = Mat3::Identity();
  d(2, 2) = (u * v.transpose()).determinant() < 0 ? -1.0 : 1.0;
  return u * d * v.transpose();
}

/// Least-squares rigid transform mapping src onto dst (covariance SVD with
/// reflection fix). Throws kDegenerateCorrespondences for < 3 pairs or
/// collinear/coincident sources.
inline RigidPose kabsch_align(std::span<const Vec3> src, std::span<const Vec3> dst) {
  if (src.size() != dst.size()) {
    throw Error(ErrorCode::kInvalidArgument, "kabsch_align: size mismatch");
  }
  if (src.size() < 3) {
    throw Error(ErrorCode::kDegenerateCorrespondences, "kabsch_align: fewer than 3 pairs");
  }
  const double n = static_cast<double>(src.size());
  Vec3 cs = Vec3::Zero(), cd = Vec3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    cs += src[i];
    cd += dst[i];
  }
  cs /= n;
  cd /= n;
  Mat3 h = Mat3::Zero();
  double spread = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    Vec3 a = src[i] - cs;
    h += a * (dst[i] - cd).transpose();
    spread += a.squaredNorm();
  }
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  // Rank < 2 leaves the rotation about the degenerate axis undetermined.
  if (spread <= 0.0 || sv(1) <= 1e-12 * std::max(sv(0), 1e-300)) {
    throw Error(ErrorCode::kDegenerateCorrespondences, "kabsch_align: rank-deficient covariance");
  }
  Mat3 u = svd.matrixU();
  Mat3 v = svd.matrixV();
  Mat3 d = Mat3::Identity();
  d(2, 2) = (v * u.transpose()).determinant() < 0 ? -1.0 : 1.0;
  RigidPose out;
  out.rotation = v * d * u.transpose();
  out.translation = cd - out.rotation * cs;
  return out;
}

inline Mat3 random_rotation(Rng& rng) {
  // Uniform on SO(3) via normalized Gaussian quaternion.
  Eigen::Quaterniond q(gaussian(rng, 1.0), gaussian(rng, 1.0), gaussian(rng, 1.0),
                       gaussian(rng, 1.0));
  q.normalize();
  return q.toRotationMatrix();
}

inline Mat3 axis_angle(const Vec3& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

}  // namespace pointvote
