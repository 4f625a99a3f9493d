#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <vector>

#include "pointvote/geometry/nn_index.hpp"
#include "pointvote/geometry/rigid.hpp"
#include "pointvote/model.hpp"

namespace pointvote {

// Training-data recipe: label scene points against the ground-truth model,
// cut spheres around foreground/background centers, augment, jitter.

struct JitterChannels {
  bool position = true;
  bool normal = true;
  bool curvature = true;
  bool color = true;
};

struct DataPrepConfig {
  double fg_threshold = 10.0;  // mm, foreground iff distance <= this
  double bg_threshold = 20.0;  // mm, background iff distance > this
  std::size_t points_per_example = 2048;
  double sphere_factor = 0.6;  // sphere radius = factor x model diameter
  int num_positives = 20;
  int num_easy = 20;
  int num_hard = 10;
  double hard_min_factor = 0.6;  // hard-negative band around the object centroid, x diameter
  double hard_max_factor = 1.2;
  bool balanced = true;
  int background_swap_multiplier = 1;
  double object_shift_fraction = 0.05;
  double segment_drop_prob = 0.2;
  double jitter_sigma = 0.01;
  JitterChannels jitter;
};

constexpr int kDiscardLabel = -1;
constexpr int kBackgroundLabel = 0;

/// Per scene point: -1 discard, 0 background, k in 1..K foreground with the
/// nearest keypoint id.
struct SceneLabels {
  std::vector<int> labels;

  bool is_foreground(std::size_t i) const { return labels[i] > 0; }
  bool is_discard(std::size_t i) const { return labels[i] == kDiscardLabel; }
  bool is_background(std::size_t i) const { return labels[i] == kBackgroundLabel; }

  std::size_t count(int which) const {
    // which: -1 discard, 0 background, 1 any foreground
    std::size_t n = 0;
    for (int l : labels) n += (which == 1 ? l > 0 : l == which);
    return n;
  }
};

struct ExamplePoint {
  std::array<float, 3> position{};
  std::array<float, 3> normal{};
  float curvature = 0.0f;
  std::array<float, 3> color{};
};

enum class ExampleKind : std::uint8_t {
  kPositive = 0,
  kEasyNegative = 1,
  kHardNegative = 2,
  kBackgroundSwap = 3,
  kObjectOnly = 4,
  kMixedBackground = 5,
};

struct ExampleMeta {
  ExampleKind kind = ExampleKind::kPositive;
  std::uint32_t scene_id = 0;
  Vec3 anchor = Vec3::Zero();    // sphere center in the scene frame
  Vec3 centroid = Vec3::Zero();  // subtracted from positions; adds back to the scene frame
};

/// A centered point set with a binary class label and one segmentation label
/// in 0..K per point.
struct LabeledExample {
  std::vector<ExamplePoint> points;
  std::vector<std::uint16_t> seg_labels;
  std::uint8_t class_label = 0;
  bool has_color = false;
  ExampleMeta meta;

  std::size_t size() const { return points.size(); }
};

inline ExamplePoint to_example_point(const Point& p, const Vec3& offset) {
  ExamplePoint e;
  for (int k = 0; k < 3; ++k) {
    e.position[k] = static_cast<float>(p.position[k] - offset[k]);
    e.normal[k] = static_cast<float>(p.normal[k]);
    e.color[k] = static_cast<float>(p.color[k]);
  }
  e.curvature = static_cast<float>(p.curvature);
  return e;
}

/// Foreground iff within fg_threshold of the gt-transformed dense model,
/// discard within (fg, bg], background beyond. Foreground points carry the
/// nearest transformed keypoint id.
inline SceneLabels label_scene(const PointCloud& scene, const ObjectModel& model, const RigidPose& gt,
                               const DataPrepConfig& cfg = {}) {
  const NNIndex model_index(transform_points(gt, model.cloud.positions()));
  std::vector<Vec3> kp;
  for (const auto& k : model.keypoints) kp.push_back(gt.apply(k.position));
  const NNIndex kp_index(std::move(kp), 4);
  SceneLabels out;
  out.labels.resize(scene.size(), kBackgroundLabel);
  for (std::size_t i = 0; i < scene.size(); ++i) {
    const Vec3& p = scene.points[i].position;
    const auto nn = model_index.nearest_within(p, cfg.bg_threshold);
    if (!nn) continue;
    if (nn->distance <= cfg.fg_threshold) {
      out.labels[i] = static_cast<int>(kp_index.nearest(p).id) + 1;
    } else {
      out.labels[i] = kDiscardLabel;
    }
  }
  return out;
}

namespace detail {

struct LabeledPoint {
  ExamplePoint point;
  std::uint16_t label = 0;
};

// Uniform draw of `n` items: without replacement when enough exist, otherwise
// every item once and the remainder with replacement.
template <typename T>
std::vector<T> draw_fixed(const std::vector<T>& items, std::size_t n, Rng& rng) {
  std::vector<T> out;
  out.reserve(n);
  if (items.size() >= n) {
    std::vector<std::size_t> order(items.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = i + uniform_index(rng, order.size() - i);
      std::swap(order[i], order[j]);
      out.push_back(items[order[i]]);
    }
  } else {
    out = items;
    while (out.size() < n) out.push_back(items[uniform_index(rng, items.size())]);
  }
  return out;
}

inline LabeledExample finalize_example(const std::vector<LabeledPoint>& pts, std::size_t n, Rng& rng,
                                       std::uint8_t class_label, bool has_color, ExampleMeta meta) {
  const auto chosen = draw_fixed(pts, n, rng);
  Eigen::Vector3d c = Eigen::Vector3d::Zero();
  for (const auto& p : chosen) c += Eigen::Vector3d(p.point.position[0], p.point.position[1], p.point.position[2]);
  c /= static_cast<double>(chosen.size());
  LabeledExample ex;
  ex.class_label = class_label;
  ex.has_color = has_color;
  ex.meta = meta;
  ex.meta.centroid += c;
  ex.points.reserve(n);
  ex.seg_labels.reserve(n);
  for (const auto& p : chosen) {
    ExamplePoint q = p.point;
    for (int k = 0; k < 3; ++k) q.position[k] = static_cast<float>(q.position[k] - c[k]);
    ex.points.push_back(q);
    ex.seg_labels.push_back(p.label);
  }
  return ex;
}

inline void recenter(LabeledExample& ex) {
  Eigen::Vector3d c = Eigen::Vector3d::Zero();
  for (const auto& p : ex.points) c += Eigen::Vector3d(p.position[0], p.position[1], p.position[2]);
  c /= static_cast<double>(ex.points.size());
  for (auto& p : ex.points)
    for (int k = 0; k < 3; ++k) p.position[k] = static_cast<float>(p.position[k] - c[k]);
  ex.meta.centroid += c;
}

inline std::vector<LabeledPoint> to_labeled(const LabeledExample& ex) {
  std::vector<LabeledPoint> out(ex.size());
  for (std::size_t i = 0; i < ex.size(); ++i) out[i] = {ex.points[i], ex.seg_labels[i]};
  return out;
}

}  // namespace detail

/// Scene ids within `radius` of center that pass `keep`, ascending.
template <typename Pred>
std::vector<std::size_t> sphere_members(const NNIndex& index, const Vec3& center, double radius, Pred keep) {
  auto ids = index.radius_search(center, radius);
  std::erase_if(ids, [&](std::size_t i) { return !keep(i); });
  return ids;
}

/// One training sphere: non-discard scene points within sphere_factor x
/// diameter of `center`, drawn to exactly points_per_example and centered.
inline LabeledExample extract_example(const PointCloud& scene, const NNIndex& scene_index, const SceneLabels& labels,
                                      const Vec3& center, const ObjectModel& model, std::uint8_t class_label,
                                      Rng& rng, const DataPrepConfig& cfg = {}, ExampleMeta meta = {}) {
  const double radius = cfg.sphere_factor * model.diameter;
  const auto ids = sphere_members(scene_index, center, radius, [&](std::size_t i) { return !labels.is_discard(i); });
  if (ids.empty()) throw Error(ErrorCode::kEmptyNeighborhood, "no usable scene points in sphere");
  std::vector<detail::LabeledPoint> pts;
  pts.reserve(ids.size());
  for (auto i : ids) {
    pts.push_back({to_example_point(scene.points[i], Vec3::Zero()),
                   static_cast<std::uint16_t>(std::max(0, labels.labels[i]))});
  }
  meta.anchor = center;
  meta.centroid = Vec3::Zero();
  return detail::finalize_example(pts, cfg.points_per_example, rng, class_label, scene.has_color, meta);
}

struct InstanceExamples {
  std::vector<LabeledExample> examples;
  int easy_shortfall = 0;
  int hard_shortfall = 0;
};

template <typename T>
std::vector<T> pick_without_replacement(std::vector<T> items, std::size_t n, Rng& rng) {
  n = std::min(n, items.size());
  for (std::size_t i = 0; i < n; ++i) std::swap(items[i], items[i + uniform_index(rng, items.size() - i)]);
  items.resize(n);
  return items;
}

/// 20 positives at random foreground points, 20 easy negatives at background
/// points whose sphere holds no foreground, 10 hard negatives at background
/// points in the (0.6, 1.2] x diameter band around the object centroid.
inline InstanceExamples generate_instance_examples(const PointCloud& scene, const NNIndex& scene_index,
                                                   const SceneLabels& labels, const ObjectModel& model,
                                                   const RigidPose& gt, Rng& rng, const DataPrepConfig& cfg = {},
                                                   std::uint32_t scene_id = 0) {
  std::vector<std::size_t> fg, bg;
  for (std::size_t i = 0; i < scene.size(); ++i) {
    if (labels.is_foreground(i)) fg.push_back(i);
    else if (labels.is_background(i)) bg.push_back(i);
  }
  if (fg.size() < static_cast<std::size_t>(std::max(cfg.num_positives, 1))) {
    throw Error(ErrorCode::kInsufficientForeground,
                "scene has " + std::to_string(fg.size()) + " foreground points");
  }
  const double radius = cfg.sphere_factor * model.diameter;
  std::vector<Vec3> fg_pos;
  for (auto i : fg) fg_pos.push_back(scene.points[i].position);
  const NNIndex fg_index(std::move(fg_pos));
  const Vec3 object_center = gt.apply(centroid(model.cloud.positions()));

  std::vector<std::size_t> easy, hard;
  for (auto i : bg) {
    const Vec3& p = scene.points[i].position;
    if (fg_index.nearest(p).distance > radius) easy.push_back(i);
    const double d = (p - object_center).norm();
    if (d > cfg.hard_min_factor * model.diameter && d <= cfg.hard_max_factor * model.diameter) hard.push_back(i);
  }

  InstanceExamples out;
  auto emit = [&](const std::vector<std::size_t>& centers, std::uint8_t cls, ExampleKind kind) {
    for (auto i : centers) {
      ExampleMeta meta;
      meta.kind = kind;
      meta.scene_id = scene_id;
      out.examples.push_back(
          extract_example(scene, scene_index, labels, scene.points[i].position, model, cls, rng, cfg, meta));
    }
  };
  emit(pick_without_replacement(fg, cfg.num_positives, rng), 1, ExampleKind::kPositive);
  const auto easy_centers = pick_without_replacement(easy, cfg.num_easy, rng);
  emit(easy_centers, 0, ExampleKind::kEasyNegative);
  const auto hard_centers = pick_without_replacement(hard, cfg.num_hard, rng);
  emit(hard_centers, 0, ExampleKind::kHardNegative);
  // Easy negatives never contain foreground points.
  for (auto& ex : out.examples) {
    if (ex.meta.kind == ExampleKind::kEasyNegative) std::fill(ex.seg_labels.begin(), ex.seg_labels.end(), 0);
  }
  out.easy_shortfall = cfg.num_easy - static_cast<int>(easy_centers.size());
  out.hard_shortfall = cfg.num_hard - static_cast<int>(hard_centers.size());
  return out;
}

struct AugmentCounts {
  int background_swap = 0;
  int object_only = 0;
  int mixed_background = 0;
};

/// Balanced: 15 background-swap + 15 object-only positives against 30 mixed
/// negatives. Literal: 20/20/20. The swap count scales with the multiplier,
/// and balanced mode grows the negatives to match.
inline AugmentCounts augment_counts(const DataPrepConfig& cfg) {
  const int m = std::max(1, cfg.background_swap_multiplier);
  if (cfg.balanced) return {15 * m, 15, 15 * m + 15};
  return {20 * m, 20, 20};
}

struct AugmentResult {
  std::vector<LabeledExample> examples;
  int skipped = 0;  // requested examples that could not be built (e.g. no easy negatives)
};

inline AugmentResult augment(const std::vector<LabeledExample>& instance, double diameter, Rng& rng,
                             const DataPrepConfig& cfg = {}) {
  using detail::LabeledPoint;
  std::vector<const LabeledExample*> positives, easies;
  for (const auto& ex : instance) {
    if (ex.meta.kind == ExampleKind::kPositive) positives.push_back(&ex);
    if (ex.meta.kind == ExampleKind::kEasyNegative) easies.push_back(&ex);
  }
  const double radius = cfg.sphere_factor * diameter;
  const double r2 = radius * radius;
  const auto counts = augment_counts(cfg);
  AugmentResult out;

  auto shifted = [](std::vector<LabeledPoint> pts, const Vec3& d) {
    for (auto& p : pts)
      for (int k = 0; k < 3; ++k) p.point.position[k] = static_cast<float>(p.point.position[k] + d[k]);
    return pts;
  };
  auto random_shift = [&](double half_range) {
    return Vec3(uniform(rng, -half_range, half_range), uniform(rng, -half_range, half_range),
                uniform(rng, -half_range, half_range));
  };
  // Re-cut to the sphere around the source anchor, in the source's centered frame.
  auto cut = [&](std::vector<LabeledPoint> pts, const LabeledExample& frame) {
    const Vec3 c = frame.meta.anchor - frame.meta.centroid;
    std::erase_if(pts, [&](const LabeledPoint& p) {
      return (Vec3(p.point.position[0], p.point.position[1], p.point.position[2]) - c).squaredNorm() > r2;
    });
    return pts;
  };
  // Object part of a positive with whole keypoint segments dropped (p=0.2
  // each, at most half of them) and a small random translation.
  auto object_part = [&](const LabeledExample& pos) {
    std::vector<LabeledPoint> obj;
    std::vector<std::uint16_t> ids;
    for (std::size_t i = 0; i < pos.size(); ++i) {
      if (pos.seg_labels[i] == 0) continue;
      obj.push_back({pos.points[i], pos.seg_labels[i]});
      ids.push_back(pos.seg_labels[i]);
    }
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    std::shuffle(ids.begin(), ids.end(), rng);
    const std::size_t cap = ids.size() / 2;
    std::vector<std::uint16_t> dropped;
    for (auto id : ids) {
      if (dropped.size() >= cap) break;
      if (uniform(rng, 0, 1) < cfg.segment_drop_prob) dropped.push_back(id);
    }
    std::erase_if(obj, [&](const LabeledPoint& p) {
      return std::find(dropped.begin(), dropped.end(), p.label) != dropped.end();
    });
    return shifted(std::move(obj), random_shift(cfg.object_shift_fraction * diameter));
  };
  auto background_part = [&](const LabeledExample& neg) {
    return shifted(detail::to_labeled(neg), random_shift(0.5 * diameter));
  };
  auto meta_for = [](const LabeledExample& src, ExampleKind kind) {
    ExampleMeta m = src.meta;
    m.kind = kind;
    return m;
  };
  const std::size_t n = cfg.points_per_example;

  for (int i = 0; i < counts.background_swap; ++i) {
    if (positives.empty() || easies.empty()) {
      ++out.skipped;
      continue;
    }
    const auto& pos = *positives[i % positives.size()];
    auto pts = object_part(pos);
    auto bg = background_part(*easies[uniform_index(rng, easies.size())]);
    pts.insert(pts.end(), bg.begin(), bg.end());
    pts = cut(std::move(pts), pos);
    if (pts.empty()) {
      ++out.skipped;
      continue;
    }
    out.examples.push_back(detail::finalize_example(pts, n, rng, 1, pos.has_color, meta_for(pos, ExampleKind::kBackgroundSwap)));
  }
  for (int i = 0; i < counts.object_only; ++i) {
    if (positives.empty()) {
      ++out.skipped;
      continue;
    }
    const auto& pos = *positives[i % positives.size()];
    auto pts = cut(object_part(pos), pos);
    if (pts.empty()) {
      ++out.skipped;
      continue;
    }
    out.examples.push_back(detail::finalize_example(pts, n, rng, 1, pos.has_color, meta_for(pos, ExampleKind::kObjectOnly)));
  }
  for (int i = 0; i < counts.mixed_background; ++i) {
    if (easies.empty()) {
      ++out.skipped;
      continue;
    }
    const auto& a = *easies[uniform_index(rng, easies.size())];
    const auto& b = *easies[uniform_index(rng, easies.size())];
    auto pts = background_part(a);
    auto more = background_part(b);
    pts.insert(pts.end(), more.begin(), more.end());
    pts = cut(std::move(pts), a);
    if (pts.empty()) {
      ++out.skipped;
      continue;
    }
    out.examples.push_back(detail::finalize_example(pts, n, rng, 0, a.has_color, meta_for(a, ExampleKind::kMixedBackground)));
  }
  return out;
}

/// Zero-mean Gaussian jitter in each channel's native unit; normals are
/// re-normalized, curvature and color clamped to [0,1], positions re-centered.
inline void jitter_example(LabeledExample& ex, Rng& rng, double sigma, const JitterChannels& ch) {
  std::normal_distribution<double> noise(0.0, sigma);
  for (auto& p : ex.points) {
    if (ch.position)
      for (auto& v : p.position) v = static_cast<float>(v + noise(rng));
    if (ch.normal) {
      Vec3 n(p.normal[0] + noise(rng), p.normal[1] + noise(rng), p.normal[2] + noise(rng));
      if (n.norm() > 1e-12) n.normalize();
      for (int k = 0; k < 3; ++k) p.normal[k] = static_cast<float>(n[k]);
    }
    if (ch.curvature) p.curvature = static_cast<float>(std::clamp(p.curvature + noise(rng), 0.0, 1.0));
    if (ch.color && ex.has_color)
      for (auto& v : p.color) v = static_cast<float>(std::clamp(v + noise(rng), 0.0, 1.0));
  }
  if (ch.position) detail::recenter(ex);
}

struct SceneExamples {
  std::vector<LabeledExample> examples;  // 50 instance examples then the augmented ones
  int easy_shortfall = 0;
  int hard_shortfall = 0;
  int augment_skipped = 0;
};

/// Full per-annotation recipe: label, sample 50, augment 60, jitter all.
inline SceneExamples prepare_scene_examples(const PointCloud& scene, const ObjectModel& model, const RigidPose& gt,
                                            Rng& rng, const DataPrepConfig& cfg = {}, std::uint32_t scene_id = 0) {
  const NNIndex index(scene);
  const auto labels = label_scene(scene, model, gt, cfg);
  auto inst = generate_instance_examples(scene, index, labels, model, gt, rng, cfg, scene_id);
  auto aug = augment(inst.examples, model.diameter, rng, cfg);
  SceneExamples out;
  out.examples = std::move(inst.examples);
  out.examples.insert(out.examples.end(), std::make_move_iterator(aug.examples.begin()),
                      std::make_move_iterator(aug.examples.end()));
  for (auto& ex : out.examples) jitter_example(ex, rng, cfg.jitter_sigma, cfg.jitter);
  out.easy_shortfall = inst.easy_shortfall;
  out.hard_shortfall = inst.hard_shortfall;
  out.augment_skipped = aug.skipped;
  return out;
}

}  // namespace pointvote
