#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "pointvote/geometry/nn_index.hpp"
#include "pointvote/geometry/rigid.hpp"

namespace pointvote {

struct IcpLevel {
  double max_corr_dist = 10.0;  // mm
  int max_iters = 30;
};

inline std::vector<IcpLevel> default_icp_schedule() { return {{50.0, 30}, {25.0, 30}, {10.0, 30}}; }

struct IcpResult {
  RigidPose pose;
  // Per level: gated residual before the first update, then after each update.
  std::vector<std::vector<double>> residuals;
  int iterations = 0;
  std::size_t final_pairs = 0;
};

namespace detail {

struct IcpPairing {
  std::vector<Vec3> src, dst;
  double gated_rms = 0.0;
};

// Pairs every transformed model point with its scene NN if within the gate.
// Unpaired points contribute gate^2, which makes the residual a truncated
// quadratic that point-to-point ICP cannot increase.
inline IcpPairing pair_points(std::span<const Vec3> model, const NNIndex& scene,
                              const RigidPose& pose, double gate) {
  IcpPairing out;
  double sum = 0.0;
  const double g2 = gate * gate;
  for (const auto& m : model) {
    const auto nn = scene.nearest_within(pose.apply(m), gate);
    if (nn) {
      out.src.push_back(m);
      out.dst.push_back(scene.point(nn->id));
      sum += nn->distance * nn->distance;
    } else {
      sum += g2;
    }
  }
  out.gated_rms = model.empty() ? 0.0 : std::sqrt(sum / static_cast<double>(model.size()));
  return out;
}

}  // namespace detail

/// Coarse-to-fine point-to-point ICP. Each level shrinks the correspondence
/// gate; a level ends when the gated RMS changes by < 1e-6 mm or after
/// max_iters updates. Throws kNoOverlap when no level finds 3 pairs.
inline IcpResult icp_refine(std::span<const Vec3> model_points, const NNIndex& scene,
                            const RigidPose& init, const std::vector<IcpLevel>& schedule) {
  if (schedule.empty()) throw Error(ErrorCode::kInvalidArgument, "ICP schedule is empty");
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    if (!(schedule[i].max_corr_dist > 0) || schedule[i].max_iters < 0 ||
        (i > 0 && !(schedule[i].max_corr_dist < schedule[i - 1].max_corr_dist))) {
      throw Error(ErrorCode::kInvalidArgument, "ICP gates must be positive and strictly decreasing");
    }
  }
  IcpResult result;
  result.pose = init;
  bool any_overlap = false;
  for (const auto& level : schedule) {
    auto& history = result.residuals.emplace_back();
    auto pairing = detail::pair_points(model_points, scene, result.pose, level.max_corr_dist);
    history.push_back(pairing.gated_rms);
    for (int it = 0; it < level.max_iters; ++it) {
      if (pairing.src.size() < 3) break;
      any_overlap = true;
      RigidPose next;
      try {
        next = kabsch_align(pairing.src, pairing.dst);
      } catch (const Error&) {
        break;
      }
      auto next_pairing = detail::pair_points(model_points, scene, next, level.max_corr_dist);
      const double change = std::abs(history.back() - next_pairing.gated_rms);
      result.pose = next;
      pairing = std::move(next_pairing);
      history.push_back(pairing.gated_rms);
      ++result.iterations;
      if (change < 1e-6) break;
    }
    if (pairing.src.size() >= 3) any_overlap = true;
    result.final_pairs = pairing.src.size();
  }
  if (!any_overlap) throw Error(ErrorCode::kNoOverlap, "ICP found fewer than 3 pairs at every level");
  return result;
}

}  // namespace pointvote
