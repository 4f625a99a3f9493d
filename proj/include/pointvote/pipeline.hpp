#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "pointvote/dataset.hpp"
#include "pointvote/geometry/cloud_ops.hpp"
#include "pointvote/geometry/icp.hpp"
#include "pointvote/model.hpp"
#include "pointvote/network.hpp"
#include "pointvote/verification.hpp"
#include "pointvote/voting.hpp"

namespace pointvote {

struct DetectConfig {
  double anchor_voxel = 25.0;  // mm
  std::size_t min_anchor_points = 64;
  std::size_t top_k = 16;
  DataPrepConfig data;  // sphere radius factor and points per sphere
  VotingParams voting;
  std::vector<IcpLevel> icp = default_icp_schedule();
  double icp_model_voxel = 4.0;     // mm, model thinning for ICP
  double verify_model_voxel = 3.0;  // mm, model thinning for verification
  VerificationParams verification;
  double normal_radius = 12.0;  // used only when the scene lacks normals
  std::uint64_t seed = 0;
  int threads = 1;
};

/// Wall time per stage, milliseconds.
struct StageTiming {
  double anchors = 0, classify = 0, segment = 0, vote = 0, icp = 0, verify = 0;
  double total() const { return anchors + classify + segment + vote + icp + verify; }
};

struct AnchorScore {
  std::size_t anchor = 0;  // index into DetectionResult::anchors
  double probability = 0;
};

struct DetectionResult {
  std::vector<Vec3> anchors;          // voxel centres with enough sphere points
  std::size_t anchors_skipped = 0;    // fewer than min_anchor_points in sphere
  std::vector<AnchorScore> segmented; // the top-k, best first
  std::vector<PoseHypothesis> ranked; // ascending l_loc
  std::vector<std::string> failures;  // per segmented anchor without a hypothesis
  StageTiming timing;

  bool found() const { return !ranked.empty(); }
  const PoseHypothesis& best() const {
    if (ranked.empty()) throw Error(ErrorCode::kNoHypothesis, "detection failed: no hypothesis");
    return ranked.front();
  }
};

/// Debug artifacts of one detection, in scene coordinates.
struct DetectDebug {
  PointCloud anchors;        // A
  PointCloud scored;         // B: anchors colored by class probability
  PointCloud top_spheres;    // C: points of the top-k spheres
  PointCloud segmented;      // D: foreground-labeled points, colored by label
  PointCloud votes;          // E: vote translations of the best anchor
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

/// fn(i) for i in [0, n) on `threads` workers with contiguous chunks.
inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w * chunk; i < std::min(n, (w + 1) * chunk); ++i) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline SceneLabels unlabeled(const PointCloud& scene) {
  SceneLabels l;
  l.labels.assign(scene.size(), kBackgroundLabel);
  return l;
}

}  // namespace detail

/// Correspondences from an example's own segmentation labels.
inline std::vector<Correspondence> correspondences_from_labels(const LabeledExample& ex, const ObjectModel& model) {
  std::vector<Correspondence> out;
  for (std::size_t i = 0; i < ex.size(); ++i) {
    if (ex.seg_labels[i] == 0) continue;
    const auto& p = ex.points[i];
    const Vec3 nrm(p.normal[0], p.normal[1], p.normal[2]);
    if (nrm.norm() < 1e-9) continue;
    out.push_back(make_correspondence(Vec3(p.position[0], p.position[1], p.position[2]) + ex.meta.centroid, nrm,
                                      ex.seg_labels[i], model));
  }
  return out;
}

/// Shared stages E-F: vote, refine with ICP, verify. Anchors are processed
/// independently and returned in a fixed order before ranking.
class PoseStages {
 public:
  PoseStages(const PointCloud& scene, const ObjectModel& model, const DetectConfig& cfg)
      : scene_(scene),
        model_(model),
        cfg_(cfg),
        verifier_(scene, cfg.verification),
        icp_model_(voxel_downsample(model.cloud, cfg.icp_model_voxel)),
        verify_model_(voxel_downsample(model.cloud, cfg.verify_model_voxel)),
        view_(scene.view_origin.value_or(Vec3::Zero())) {}

  const SceneVerifier& verifier() const { return verifier_; }

  /// Returns nullopt (with a reason) when the anchor yields no hypothesis.
  std::optional<PoseHypothesis> run(std::span<const Correspondence> corr, int anchor, StageTiming& timing,
                                    std::string* why = nullptr) const {
    auto t0 = detail::Clock::now();
    PoseHypothesis h;
    try {
      h = estimate_pose(corr, cfg_.voting);
    } catch (const Error& e) {
      if (why) *why = e.what();
      timing.vote += detail::ms_since(t0);
      return std::nullopt;
    }
    h.anchor = anchor;
    timing.vote += detail::ms_since(t0);

    t0 = detail::Clock::now();
    // The visible part is re-estimated after the coarse pass; the final
    // pass uses only the finest gate.
    for (int pass = 0; pass < 2; ++pass) {
      auto pts = visible_model_points(h.pose);
      if (pts.size() < 3) pts = icp_model_.positions();
      const std::vector<IcpLevel> schedule = pass == 0 ? cfg_.icp : std::vector<IcpLevel>{cfg_.icp.back()};
      try {
        h.pose = icp_refine(pts, verifier_.index(), h.pose, schedule).pose;
      } catch (const Error&) {
        break;  // no overlap at any gate: keep the current pose
      }
    }
    timing.icp += detail::ms_since(t0);

    t0 = detail::Clock::now();
    h = verifier_.verify(h, model_, &verify_model_);
    timing.verify += detail::ms_since(t0);
    return h;
  }

  /// ICP model points (model frame) facing the camera and not hidden by
  /// the scene at `pose`.
  std::vector<Vec3> visible_model_points(const RigidPose& pose) const {
    std::vector<Vec3> all, front;
    for (const auto& p : icp_model_.points) {
      const Vec3 x = pose.apply(p.position);
      if ((pose.rotation * p.normal).dot(view_ - x) <= 0) continue;
      all.push_back(x);
      front.push_back(p.position);
    }
    std::vector<Vec3> out;
    for (auto i : remove_occluded(all, verifier_.depth(), cfg_.verification.occlusion_margin).indices) {
      out.push_back(front[i]);
    }
    return out;
  }

  static void rank(std::vector<PoseHypothesis>& hyps) {
    std::stable_sort(hyps.begin(), hyps.end(), [](const PoseHypothesis& a, const PoseHypothesis& b) {
      if (a.l_loc != b.l_loc) return a.l_loc < b.l_loc;
      return a.anchor < b.anchor;
    });
  }

 private:
  const PointCloud& scene_;
  const ObjectModel& model_;
  const DetectConfig& cfg_;
  SceneVerifier verifier_;
  PointCloud icp_model_, verify_model_;
  Vec3 view_;
};

inline PointCloud with_normals(const PointCloud& scene, double radius) {
  if (scene.has_normals) return scene;
  return estimate_normals(scene, radius, scene.view_origin.value_or(Vec3::Zero()));
}

namespace detail {

// Stage dumps A-E shared by detect and oracle_detect. `order` maps
// segmented slots to anchor indices.
inline void fill_debug(DetectDebug& dbg, const PointCloud& scene, const ObjectModel& model, const DetectConfig& cfg,
                       const DetectionResult& res, const std::vector<double>& prob,
                       const std::vector<std::size_t>& order, const std::vector<LabeledExample>& spheres,
                       const std::vector<std::vector<Correspondence>>& corr) {
  dbg.anchors = scene.empty_like();
  dbg.scored = scene.empty_like();
  dbg.scored.has_color = true;
  for (std::size_t a = 0; a < res.anchors.size(); ++a) {
    Point p;
    p.position = res.anchors[a];
    dbg.anchors.points.push_back(p);
    p.color = Vec3(prob[a], 0.2, 1.0 - prob[a]);
    dbg.scored.points.push_back(p);
  }
  dbg.top_spheres = scene.empty_like();
  dbg.segmented = scene.empty_like();
  dbg.segmented.has_color = true;
  const auto k = static_cast<double>(std::max<std::size_t>(1, model.num_keypoints()));
  for (const auto& ex : spheres) {
    for (std::size_t j = 0; j < ex.size(); ++j) {
      const auto& q = ex.points[j];
      Point p;
      p.position = Vec3(q.position[0], q.position[1], q.position[2]) + ex.meta.centroid;
      p.normal = Vec3(q.normal[0], q.normal[1], q.normal[2]);
      p.color = Vec3(q.color[0], q.color[1], q.color[2]);
      dbg.top_spheres.points.push_back(p);
      if (ex.seg_labels[j] == 0) continue;
      const double h = ex.seg_labels[j] / k;
      p.color = Vec3(h, 1.0 - h, 0.5);
      dbg.segmented.points.push_back(p);
    }
  }
  dbg.votes = scene.empty_like();
  if (res.found()) {
    const auto s = static_cast<std::size_t>(
        std::find(order.begin(), order.end(), static_cast<std::size_t>(res.best().anchor)) - order.begin());
    std::vector<Correspondence> sub;
    for (auto i : stride_subsample(corr[s].size(), cfg.voting.max_correspondences)) sub.push_back(corr[s][i]);
    for (const auto& v : pose_votes(sub, cfg.voting.n_theta)) {
      Point p;
      p.position = v.pose.translation;
      dbg.votes.points.push_back(p);
    }
  }
}

}  // namespace detail

/// Anchors -> classification -> top-k segmentation -> voting -> ICP ->
/// verification. Hypotheses are ranked by localization loss.
inline DetectionResult detect(const PointCloud& scene_in, const ObjectModel& model, const PointNet<float>& net,
                              const DetectConfig& cfg = {}, DetectDebug* debug = nullptr) {
  if (scene_in.empty()) throw Error(ErrorCode::kEmptyScene, "detect: empty scene");
  const auto& ncfg = net.config();
  if (ncfg.num_keypoints != static_cast<int>(model.num_keypoints())) {
    throw Error(ErrorCode::kConfig, "network keypoint count does not match the model");
  }
  if (static_cast<std::size_t>(ncfg.num_points) != cfg.data.points_per_example) {
    throw Error(ErrorCode::kConfig, "network point count does not match points_per_example");
  }
  const PointCloud scene = with_normals(scene_in, cfg.normal_radius);
  DetectionResult res;

  auto t0 = detail::Clock::now();
  const NNIndex index(scene);
  const SceneLabels none = detail::unlabeled(scene);
  const double radius = cfg.data.sphere_factor * model.diameter;
  for (const auto& group : voxel_groups(scene.positions(), cfg.anchor_voxel)) {
    Vec3 c = Vec3::Zero();
    for (auto i : group) c += scene.points[i].position;
    c /= static_cast<double>(group.size());
    if (index.radius_count(c, radius) < cfg.min_anchor_points) {
      ++res.anchors_skipped;
      continue;
    }
    res.anchors.push_back(c);
  }
  if (res.anchors.empty()) throw Error(ErrorCode::kEmptyScene, "detect: no anchors with enough sphere points");
  res.timing.anchors = detail::ms_since(t0);

  // Sphere draws are seeded per anchor so results do not depend on threads.
  const auto sphere = [&](std::size_t a) {
    Rng rng(mix_seed(cfg.seed, a));
    return extract_example(scene, index, none, res.anchors[a], model, 0, rng, cfg.data);
  };

  t0 = detail::Clock::now();
  std::vector<double> prob(res.anchors.size());
  detail::parallel_for(res.anchors.size(), cfg.threads, [&](std::size_t a) {
    ForwardCache<float> cache;
    net.forward(net.make_input(sphere(a)), cache, false);
    prob[a] = cache.prob;
  });
  std::vector<std::size_t> order(res.anchors.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return prob[a] > prob[b]; });
  order.resize(std::min(cfg.top_k, order.size()));
  for (auto a : order) res.segmented.push_back({a, prob[a]});
  res.timing.classify = detail::ms_since(t0);

  t0 = detail::Clock::now();
  std::vector<LabeledExample> spheres(order.size());
  std::vector<std::vector<Correspondence>> corr(order.size());
  detail::parallel_for(order.size(), cfg.threads, [&](std::size_t s) {
    spheres[s] = sphere(order[s]);
    ForwardCache<float> cache;
    net.forward(net.make_input(spheres[s]), cache, true);
    const MatX<float>& logits = cache.seg.back();
    corr[s] = correspondences_from_segmentation(spheres[s], logits, model, cfg.voting.min_confidence);
    for (std::size_t j = 0; j < spheres[s].size(); ++j) {
      Eigen::Index arg = 0;
      logits.col(static_cast<Eigen::Index>(j)).maxCoeff(&arg);
      spheres[s].seg_labels[j] = static_cast<std::uint16_t>(arg);
    }
  });
  res.timing.segment = detail::ms_since(t0);

  const PoseStages stages(scene, model, cfg);
  std::vector<std::optional<PoseHypothesis>> hyps(order.size());
  std::vector<StageTiming> timings(order.size());
  std::vector<std::string> why(order.size());
  detail::parallel_for(order.size(), cfg.threads, [&](std::size_t s) {
    hyps[s] = stages.run(corr[s], static_cast<int>(order[s]), timings[s], &why[s]);
  });
  for (std::size_t s = 0; s < order.size(); ++s) {
    res.timing.vote += timings[s].vote;
    res.timing.icp += timings[s].icp;
    res.timing.verify += timings[s].verify;
    if (hyps[s]) {
      res.ranked.push_back(*hyps[s]);
    } else {
      res.failures.push_back("anchor " + std::to_string(order[s]) + ": " + why[s]);
    }
  }
  PoseStages::rank(res.ranked);

  if (debug) detail::fill_debug(*debug, scene, model, cfg, res, prob, order, spheres, corr);
  return res;
}

/// Stages D onward with ground-truth segmentation: top_k anchors drawn from
/// foreground points, labels from label_scene.
inline DetectionResult oracle_detect(const PointCloud& scene_in, const ObjectModel& model, const RigidPose& gt,
                                     const DetectConfig& cfg = {}, DetectDebug* debug = nullptr) {
  if (scene_in.empty()) throw Error(ErrorCode::kEmptyScene, "oracle_detect: empty scene");
  const PointCloud scene = with_normals(scene_in, cfg.normal_radius);
  DetectionResult res;
  auto t0 = detail::Clock::now();
  const auto labels = label_scene(scene, model, gt, cfg.data);
  std::vector<std::size_t> fg;
  for (std::size_t i = 0; i < scene.size(); ++i)
    if (labels.is_foreground(i)) fg.push_back(i);
  Rng rng(cfg.seed);
  const auto picks = pick_without_replacement(fg, cfg.top_k, rng);
  const NNIndex index(scene);
  std::vector<std::vector<Correspondence>> corr;
  std::vector<LabeledExample> spheres;
  for (std::size_t s = 0; s < picks.size(); ++s) {
    res.anchors.push_back(scene.points[picks[s]].position);
    res.segmented.push_back({s, 1.0});
    Rng ex_rng(mix_seed(cfg.seed, s + 1));
    spheres.push_back(extract_example(scene, index, labels, res.anchors.back(), model, 1, ex_rng, cfg.data));
    corr.push_back(correspondences_from_labels(spheres.back(), model));
  }
  res.timing.segment = detail::ms_since(t0);
  const PoseStages stages(scene, model, cfg);
  for (std::size_t s = 0; s < corr.size(); ++s) {
    std::string why;
    auto h = stages.run(corr[s], static_cast<int>(s), res.timing, &why);
    if (h) {
      res.ranked.push_back(*h);
    } else {
      res.failures.push_back("anchor " + std::to_string(s) + ": " + why);
    }
  }
  PoseStages::rank(res.ranked);
  if (debug) {
    std::vector<std::size_t> order(picks.size());
    std::iota(order.begin(), order.end(), 0);
    detail::fill_debug(*debug, scene, model, cfg, res, std::vector<double>(picks.size(), 1.0), order, spheres, corr);
  }
  return res;
}

/// Mean distance between corresponding model points under the two poses.
inline double add_metric(const RigidPose& est, const RigidPose& gt, const ObjectModel& model) {
  if (model.cloud.empty()) throw Error(ErrorCode::kInvalidArgument, "ADD on an empty model");
  double sum = 0.0;
  for (const auto& p : model.cloud.points) sum += (est.apply(p.position) - gt.apply(p.position)).norm();
  return sum / static_cast<double>(model.cloud.size());
}

/// Mean distance from each estimated model point to the nearest
/// ground-truth model point.
inline double adds_metric(const RigidPose& est, const RigidPose& gt, const ObjectModel& model) {
  if (model.cloud.empty()) throw Error(ErrorCode::kInvalidArgument, "ADD-S on an empty model");
  const NNIndex index(transform_points(gt, model.cloud.positions()));
  double sum = 0.0;
  for (const auto& p : model.cloud.points) sum += index.nearest(est.apply(p.position)).distance;
  return sum / static_cast<double>(model.cloud.size());
}

struct EvalRow {
  std::string scene_id;
  bool found = false;
  double add = kInfiniteLoss, adds = kInfiniteLoss, l_loc = kInfiniteLoss, s_kde = 0.0;
  bool success = false;
  StageTiming timing;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  double threshold_factor = 0.1;
  double threshold_mm = 0.0;
  bool symmetric = false;

  std::size_t successes() const {
    return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [](const EvalRow& r) { return r.success; }));
  }
  double accuracy() const { return rows.empty() ? 0.0 : static_cast<double>(successes()) / rows.size(); }
};

/// Scores one detection against ground truth. Symmetric models succeed on
/// ADD-S, others on ADD.
inline EvalRow score_detection(const std::string& id, const DetectionResult& det, const RigidPose& gt,
                               const ObjectModel& model, double threshold_factor) {
  EvalRow row;
  row.scene_id = id;
  row.timing = det.timing;
  row.found = det.found();
  if (row.found) {
    const auto& b = det.best();
    row.add = add_metric(b.pose, gt, model);
    row.adds = adds_metric(b.pose, gt, model);
    row.l_loc = b.l_loc;
    row.s_kde = b.s_kde;
    const double metric = model.is_symmetric() ? row.adds : row.add;
    row.success = metric < threshold_factor * model.diameter;
  }
  return row;
}

struct EvalScene {
  std::string id;
  PointCloud cloud;
  RigidPose gt;
};

using DetectFn = std::function<DetectionResult(const EvalScene&)>;

inline EvalReport evaluate(const std::vector<EvalScene>& scenes, const ObjectModel& model, const DetectFn& run,
                           double threshold_factor = 0.1) {
  EvalReport rep;
  rep.threshold_factor = threshold_factor;
  rep.threshold_mm = threshold_factor * model.diameter;
  rep.symmetric = model.is_symmetric();
  for (const auto& s : scenes) {
    DetectionResult det;
    try {
      det = run(s);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kEmptyScene) throw;
    }
    rep.rows.push_back(score_detection(s.id, det, s.gt, model, threshold_factor));
  }
  return rep;
}

inline std::string eval_csv(const EvalReport& rep) {
  std::ostringstream os;
  os.precision(9);
  os << "scene_id,found,add,adds,l_loc,s_kde,success,ms_anchors,ms_classify,ms_segment,ms_vote,ms_icp,ms_verify\n";
  for (const auto& r : rep.rows) {
    os << r.scene_id << ',' << int(r.found) << ',' << r.add << ',' << r.adds << ',' << r.l_loc << ',' << r.s_kde << ','
       << int(r.success) << ',' << r.timing.anchors << ',' << r.timing.classify << ',' << r.timing.segment << ','
       << r.timing.vote << ',' << r.timing.icp << ',' << r.timing.verify << '\n';
  }
  return os.str();
}

/// Timing columns vary run to run; this form holds only the results.
inline std::string eval_csv_results(const EvalReport& rep) {
  std::ostringstream os;
  os.precision(17);
  os << "scene_id,found,add,adds,l_loc,s_kde,success\n";
  for (const auto& r : rep.rows) {
    os << r.scene_id << ',' << int(r.found) << ',' << r.add << ',' << r.adds << ',' << r.l_loc << ',' << r.s_kde << ','
       << int(r.success) << '\n';
  }
  return os.str();
}

inline nlohmann::json eval_summary(const EvalReport& rep) {
  return {{"scenes", rep.rows.size()},
          {"successes", rep.successes()},
          {"accuracy", rep.accuracy()},
          {"threshold_factor", rep.threshold_factor},
          {"threshold_mm", rep.threshold_mm},
          {"metric", rep.symmetric ? "ADD-S" : "ADD"}};
}

/// Pinhole backprojection of a depth image (mm, 0 = no reading) with an
/// optional RGB image (row-major, 3 bytes per pixel).
inline PointCloud backproject_rgbd(std::span<const std::uint16_t> depth, std::span<const std::uint8_t> rgb,
                                   const Intrinsics& k) {
  const std::size_t n = static_cast<std::size_t>(k.width) * static_cast<std::size_t>(k.height);
  if (k.width <= 0 || k.height <= 0 || depth.size() != n) {
    throw Error(ErrorCode::kInvalidArgument, "depth image size does not match intrinsics");
  }
  if (!rgb.empty() && rgb.size() != 3 * n) throw Error(ErrorCode::kInvalidArgument, "rgb image size does not match depth");
  PointCloud c;
  c.intrinsics = k;
  c.view_origin = Vec3::Zero();
  c.has_color = !rgb.empty();
  for (int v = 0; v < k.height; ++v) {
    for (int u = 0; u < k.width; ++u) {
      const std::size_t i = static_cast<std::size_t>(v) * k.width + u;
      if (depth[i] == 0) continue;
      const double z = depth[i];
      Point p;
      p.position = Vec3((u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z);
      if (c.has_color) p.color = Vec3(rgb[3 * i], rgb[3 * i + 1], rgb[3 * i + 2]) / 255.0;
      c.points.push_back(p);
    }
  }
  return c;
}

}  // namespace pointvote
