#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include <gtest/gtest.h>

#include "pointvote/dataset.hpp"
#include "pointvote/dataset_io.hpp"
#include "test_shapes.hpp"

namespace pointvote {
namespace {

using testing::make_point;

struct Fixture {
  ObjectModel model;
  RigidPose gt;
  PointCloud scene;
};

Fixture make_fixture(std::uint64_t seed) {
  Rng rng(seed);
  Fixture f;
  f.model = make_object_model(testing::l_block_random(rng), 25.0);
  f.gt.rotation = axis_angle(Vec3::UnitZ(), uniform(rng, -kPi, kPi));
  f.gt.translation = Vec3(uniform(rng, -40, 40), uniform(rng, -40, 40), 15.0);
  // Independent surface sample so scene points do not coincide with model points.
  f.scene = testing::synthetic_scene(testing::l_block_random(rng), f.gt, rng);
  return f;
}

TEST(LabelScene, ExactModelIsAllForeground) {
  Rng rng(1);
  const auto model = make_object_model(testing::l_block_random(rng), 25.0);
  RigidPose gt;
  gt.rotation = axis_angle(Vec3(1, 2, 3).normalized(), 0.7);
  gt.translation = Vec3(10, 20, 500);
  PointCloud scene = model.cloud;
  for (auto& p : scene.points) p.position = gt.apply(p.position);
  const auto labels = label_scene(scene, model, gt);
  EXPECT_EQ(labels.count(1), scene.size());
  EXPECT_EQ(labels.count(0), 0u);
  const auto kp = nearest_keypoint_labels(model.cloud, model.keypoints);
  EXPECT_EQ(labels.labels, kp);
}

TEST(LabelScene, FarAwayIsAllBackground) {
  Rng rng(2);
  const auto model = make_object_model(testing::l_block_random(rng), 25.0);
  PointCloud scene = model.cloud;
  for (auto& p : scene.points) p.position += Vec3(10 * model.diameter, 0, 0);
  const auto labels = label_scene(scene, model, RigidPose::identity());
  EXPECT_EQ(labels.count(0), scene.size());
}

TEST(LabelScene, MatchesLinearScan) {
  const auto f = make_fixture(3);
  const auto labels = label_scene(f.scene, f.model, f.gt);
  const auto model_pts = transform_points(f.gt, f.model.cloud.positions());
  std::size_t fg = 0, dis = 0, bg = 0;
  for (std::size_t i = 0; i < f.scene.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& m : model_pts) best = std::min(best, (m - f.scene.points[i].position).squaredNorm());
    best = std::sqrt(best);
    const int expect = best <= 10.0 ? 1 : (best <= 20.0 ? -1 : 0);
    ASSERT_EQ(expect == 1, labels.labels[i] > 0) << i;
    if (expect != 1) {
      ASSERT_EQ(expect, labels.labels[i]) << i;
    }
    fg += expect == 1;
    dis += expect == -1;
    bg += expect == 0;
  }
  EXPECT_EQ(fg, labels.count(1));
  EXPECT_EQ(dis, labels.count(-1));
  EXPECT_EQ(bg, labels.count(0));
  EXPECT_GT(fg, 1000u);
  EXPECT_GT(dis, 0u);
}

// Sphere scene with a fixed number of points in a ball around the origin.
PointCloud ball_scene(std::size_t inside, std::size_t outside, double radius, Rng& rng) {
  PointCloud s;
  s.has_normals = true;
  while (s.size() < inside) {
    Vec3 p(uniform(rng, -radius, radius), uniform(rng, -radius, radius), uniform(rng, -radius, radius));
    if (p.norm() < 0.99 * radius) s.points.push_back(make_point(p));
  }
  for (std::size_t i = 0; i < outside; ++i) s.points.push_back(make_point(Vec3(3 * radius + i, 0, 0)));
  return s;
}

ObjectModel dummy_model(double diameter) {
  ObjectModel m;
  m.diameter = diameter;
  m.keypoints = {{Vec3::Zero(), Vec3::UnitZ()}};
  return m;
}

// Position lookup tolerant to the float rounding of center/uncenter.
std::size_t find_scene_point(const NNIndex& index, const ExamplePoint& p, const Vec3& centroid) {
  const Vec3 q(p.position[0] + centroid[0], p.position[1] + centroid[1], p.position[2] + centroid[2]);
  const auto nn = index.nearest(q);
  EXPECT_LT(nn.distance, 1e-3);
  return nn.id;
}

TEST(ExtractExample, ExactFitUsesEveryPointOnce) {
  Rng rng(4);
  const double radius = 60.0;
  const auto scene = ball_scene(2048, 100, radius, rng);
  const NNIndex index(scene);
  SceneLabels labels{std::vector<int>(scene.size(), 0)};
  const auto ex = extract_example(scene, index, labels, Vec3::Zero(), dummy_model(radius / 0.6), 0, rng);
  ASSERT_EQ(ex.size(), 2048u);
  std::vector<int> hits(scene.size(), 0);
  for (const auto& p : ex.points) ++hits[find_scene_point(index, p, ex.meta.centroid)];
  for (std::size_t i = 0; i < 2048; ++i) EXPECT_EQ(hits[i], 1);
  for (std::size_t i = 2048; i < scene.size(); ++i) EXPECT_EQ(hits[i], 0);
}

TEST(ExtractExample, SmallSphereIsFilledWithReplacement) {
  Rng rng(5);
  const auto scene = ball_scene(100, 10, 60.0, rng);
  const NNIndex index(scene);
  SceneLabels labels{std::vector<int>(scene.size(), 0)};
  const auto ex = extract_example(scene, index, labels, Vec3::Zero(), dummy_model(100.0), 0, rng);
  ASSERT_EQ(ex.size(), 2048u);
  std::set<std::size_t> used;
  for (const auto& p : ex.points) used.insert(find_scene_point(index, p, ex.meta.centroid));
  EXPECT_EQ(used.size(), 100u);
  EXPECT_LT(*used.rbegin(), 100u);
}

TEST(ExtractExample, LargeSphereIsSubsetAndCentered) {
  Rng rng(6);
  const auto scene = ball_scene(10000, 10, 60.0, rng);
  const NNIndex index(scene);
  SceneLabels labels{std::vector<int>(scene.size(), 0)};
  const auto ex = extract_example(scene, index, labels, Vec3::Zero(), dummy_model(100.0), 0, rng);
  ASSERT_EQ(ex.size(), 2048u);
  std::vector<int> hits(scene.size(), 0);
  for (const auto& p : ex.points) ++hits[find_scene_point(index, p, ex.meta.centroid)];
  for (std::size_t i = 0; i < scene.size(); ++i) EXPECT_LE(hits[i], i < 10000 ? 1 : 0);
  Eigen::Vector3d c = Eigen::Vector3d::Zero();
  for (const auto& p : ex.points) c += Eigen::Vector3d(p.position[0], p.position[1], p.position[2]);
  EXPECT_LT((c / 2048.0).norm(), 1e-6);
}

TEST(ExtractExample, EmptySphereThrowsAndDiscardIsExcluded) {
  Rng rng(7);
  const auto scene = ball_scene(50, 10, 60.0, rng);
  const NNIndex index(scene);
  SceneLabels all_discard{std::vector<int>(scene.size(), kDiscardLabel)};
  try {
    extract_example(scene, index, all_discard, Vec3::Zero(), dummy_model(100.0), 0, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyNeighborhood);
  }
  SceneLabels half{std::vector<int>(scene.size(), 0)};
  for (std::size_t i = 0; i < 25; ++i) half.labels[i] = kDiscardLabel;
  const auto ex = extract_example(scene, index, half, Vec3::Zero(), dummy_model(100.0), 0, rng);
  for (const auto& p : ex.points) EXPECT_GE(find_scene_point(index, p, ex.meta.centroid), 25u);
}

void check_instance_invariants(const Fixture& f, const InstanceExamples& inst, const SceneLabels& labels,
                               const NNIndex& index) {
  const double radius = 0.6 * f.model.diameter;
  for (const auto& ex : inst.examples) {
    ASSERT_EQ(ex.size(), 2048u);
    ASSERT_EQ(ex.seg_labels.size(), 2048u);
    ASSERT_LE(ex.class_label, 1);
    for (std::size_t i = 0; i < ex.size(); ++i) {
      const auto id = find_scene_point(index, ex.points[i], ex.meta.centroid);
      ASSERT_NE(labels.labels[id], kDiscardLabel);
      ASSERT_EQ(ex.seg_labels[i], std::max(0, labels.labels[id]));
      ASSERT_LE((index.point(id) - ex.meta.anchor).norm(), radius + 1e-9);
    }
    if (ex.meta.kind == ExampleKind::kPositive) {
      const auto center = index.nearest(ex.meta.anchor);
      EXPECT_EQ(center.distance, 0.0);
      EXPECT_TRUE(labels.is_foreground(center.id));
    }
    if (ex.meta.kind == ExampleKind::kEasyNegative) {
      // Brute-force: no foreground point anywhere in the sphere.
      for (std::size_t i = 0; i < f.scene.size(); ++i) {
        if ((f.scene.points[i].position - ex.meta.anchor).norm() <= radius) {
          ASSERT_FALSE(labels.is_foreground(i));
        }
      }
      for (auto l : ex.seg_labels) ASSERT_EQ(l, 0);
    }
    if (ex.meta.kind == ExampleKind::kHardNegative) {
      const double d = (ex.meta.anchor - f.gt.apply(centroid(f.model.cloud.positions()))).norm();
      EXPECT_GT(d, 0.6 * f.model.diameter);
      EXPECT_LE(d, 1.2 * f.model.diameter);
      EXPECT_EQ(ex.class_label, 0);
    }
  }
}

TEST(GenerateInstanceExamples, SplitAndInvariants) {
  const auto f = make_fixture(8);
  const NNIndex index(f.scene);
  const auto labels = label_scene(f.scene, f.model, f.gt);
  Rng rng(42);
  const auto inst = generate_instance_examples(f.scene, index, labels, f.model, f.gt, rng);
  ASSERT_EQ(inst.examples.size(), 50u);
  EXPECT_EQ(inst.easy_shortfall, 0);
  EXPECT_EQ(inst.hard_shortfall, 0);
  std::map<ExampleKind, int> kinds;
  for (const auto& ex : inst.examples) {
    ++kinds[ex.meta.kind];
    EXPECT_EQ(ex.class_label, ex.meta.kind == ExampleKind::kPositive ? 1 : 0);
  }
  EXPECT_EQ(kinds[ExampleKind::kPositive], 20);
  EXPECT_EQ(kinds[ExampleKind::kEasyNegative], 20);
  EXPECT_EQ(kinds[ExampleKind::kHardNegative], 10);
  check_instance_invariants(f, inst, labels, index);
}

TEST(GenerateInstanceExamples, RandomScenesKeepInvariants) {
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto f = make_fixture(1000 + s);
    const NNIndex index(f.scene);
    const auto labels = label_scene(f.scene, f.model, f.gt);
    Rng rng(s);
    const auto inst = generate_instance_examples(f.scene, index, labels, f.model, f.gt, rng);
    check_instance_invariants(f, inst, labels, index);
    if (::testing::Test::HasFatalFailure()) return;
  }
}

TEST(GenerateInstanceExamples, ObjectOnlySceneReportsShortfall) {
  Rng rng(9);
  const auto model = make_object_model(testing::l_block_random(rng), 25.0);
  const PointCloud scene = model.cloud;
  const NNIndex index(scene);
  const auto labels = label_scene(scene, model, RigidPose::identity());
  const auto inst = generate_instance_examples(scene, index, labels, model, RigidPose::identity(), rng);
  EXPECT_EQ(inst.easy_shortfall, 20);
  EXPECT_EQ(inst.hard_shortfall, 10);
  EXPECT_EQ(inst.examples.size(), 20u);
}

TEST(GenerateInstanceExamples, TooFewForegroundThrows) {
  Rng rng(10);
  const auto model = make_object_model(testing::l_block_random(rng), 25.0);
  PointCloud scene = testing::plane_grid(100, 5, 1000, 1000);
  for (int i = 0; i < 19; ++i) scene.points.push_back(model.cloud.points[i]);
  const NNIndex index(scene);
  const auto labels = label_scene(scene, model, RigidPose::identity());
  try {
    generate_instance_examples(scene, index, labels, model, RigidPose::identity(), rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInsufficientForeground);
  }
}

InstanceExamples fixture_instance(const Fixture& f, Rng& rng) {
  const NNIndex index(f.scene);
  const auto labels = label_scene(f.scene, f.model, f.gt);
  return generate_instance_examples(f.scene, index, labels, f.model, f.gt, rng);
}

TEST(Augment, BalancedSplitIsEqual) {
  const auto f = make_fixture(11);
  Rng rng(11);
  const auto inst = fixture_instance(f, rng);
  const auto aug = augment(inst.examples, f.model.diameter, rng);
  ASSERT_EQ(aug.examples.size(), 60u);
  EXPECT_EQ(aug.skipped, 0);
  int pos = 0;
  std::map<ExampleKind, int> kinds;
  for (const auto& ex : aug.examples) {
    pos += ex.class_label;
    ++kinds[ex.meta.kind];
    EXPECT_EQ(ex.size(), 2048u);
  }
  EXPECT_EQ(pos, 30);
  EXPECT_EQ(kinds[ExampleKind::kBackgroundSwap], 15);
  EXPECT_EQ(kinds[ExampleKind::kObjectOnly], 15);
  EXPECT_EQ(kinds[ExampleKind::kMixedBackground], 30);
}

TEST(Augment, LiteralSplitAndMultiplier) {
  const auto f = make_fixture(12);
  Rng rng(12);
  const auto inst = fixture_instance(f, rng);
  DataPrepConfig cfg;
  cfg.balanced = false;
  auto aug = augment(inst.examples, f.model.diameter, rng, cfg);
  ASSERT_EQ(aug.examples.size(), 60u);
  int pos = 0;
  for (const auto& ex : aug.examples) pos += ex.class_label;
  EXPECT_EQ(pos, 40);
  cfg.balanced = true;
  cfg.background_swap_multiplier = 3;
  const auto c = augment_counts(cfg);
  EXPECT_EQ(c.background_swap + c.object_only, c.mixed_background);
  EXPECT_EQ(c.background_swap, 45);
}

TEST(Augment, ObjectOnlyHasNoBackgroundAndStaysInSphere) {
  const auto f = make_fixture(13);
  Rng rng(13);
  const auto inst = fixture_instance(f, rng);
  const auto aug = augment(inst.examples, f.model.diameter, rng);
  const double radius = 0.6 * f.model.diameter;
  for (const auto& ex : aug.examples) {
    if (ex.meta.kind == ExampleKind::kObjectOnly) {
      for (auto l : ex.seg_labels) ASSERT_NE(l, 0);
    }
    if (ex.meta.kind == ExampleKind::kMixedBackground) {
      for (auto l : ex.seg_labels) ASSERT_EQ(l, 0);
    }
    // Points lie in the cut sphere around the source positive/negative frame origin.
    for (const auto& p : ex.points) {
      const Vec3 q = Vec3(p.position[0], p.position[1], p.position[2]) + ex.meta.centroid;
      ASSERT_LE((q - ex.meta.anchor).norm(), radius + 1e-3);
    }
  }
}

TEST(Augment, SegmentDropoutRemovesWholeSegments) {
  const auto f = make_fixture(14);
  Rng rng(14);
  const auto inst = fixture_instance(f, rng);
  DataPrepConfig cfg;
  cfg.segment_drop_prob = 1.0;  // drop as many as allowed: half
  const auto aug = augment(inst.examples, f.model.diameter, rng, cfg);
  for (const auto& ex : aug.examples) {
    if (ex.meta.kind != ExampleKind::kObjectOnly) continue;
    std::set<std::uint16_t> kept(ex.seg_labels.begin(), ex.seg_labels.end());
    // Source is the positive with the same anchor.
    for (const auto& src : inst.examples) {
      if (src.meta.kind != ExampleKind::kPositive || src.meta.anchor != ex.meta.anchor) continue;
      std::set<std::uint16_t> present(src.seg_labels.begin(), src.seg_labels.end());
      present.erase(0);
      EXPECT_LE(kept.size(), present.size() - present.size() / 2);
      for (auto k : kept) EXPECT_TRUE(present.count(k));
    }
  }
}

TEST(Jitter, PositionRmsMatchesSigma) {
  Rng rng(15);
  LabeledExample ex;
  ex.points.resize(100000);
  ex.seg_labels.resize(100000);
  for (auto& p : ex.points) {
    for (auto& v : p.position) v = float(uniform(rng, -50, 50));
    p.normal = {0, 0, 1};
  }
  const auto before = ex.points;
  JitterChannels only_pos{true, false, false, false};
  jitter_example(ex, rng, 0.01, only_pos);
  // Undo the re-centering shift before measuring.
  for (int k = 0; k < 3; ++k) {
    double ss = 0;
    for (std::size_t i = 0; i < ex.size(); ++i) {
      const double d = double(ex.points[i].position[k]) + ex.meta.centroid[k] - before[i].position[k];
      ss += d * d;
    }
    const double rms = std::sqrt(ss / ex.size());
    EXPECT_NEAR(rms, 0.01, 0.001) << "axis " << k;
  }
  for (std::size_t i = 0; i < ex.size(); ++i) ASSERT_EQ(ex.points[i].normal, before[i].normal);
}

TEST(Jitter, NormalsStayUnitAndColorsClamped) {
  Rng rng(16);
  LabeledExample ex;
  ex.has_color = true;
  ex.points.resize(1000);
  ex.seg_labels.resize(1000);
  for (auto& p : ex.points) {
    p.normal = {1, 0, 0};
    p.color = {0, 1, 0.5f};
    p.curvature = 0;
  }
  jitter_example(ex, rng, 0.01, JitterChannels{});
  for (const auto& p : ex.points) {
    EXPECT_NEAR(std::sqrt(p.normal[0] * p.normal[0] + p.normal[1] * p.normal[1] + p.normal[2] * p.normal[2]), 1.0, 1e-6);
    for (float c : p.color) {
      EXPECT_GE(c, 0.0f);
      EXPECT_LE(c, 1.0f);
    }
    EXPECT_GE(p.curvature, 0.0f);
  }
}

TEST(PrepareScene, FullRecipeIsDeterministic) {
  const auto f = make_fixture(17);
  const auto dir = std::filesystem::temp_directory_path();
  const auto a = (dir / "pv_det_a.bin").string(), b = (dir / "pv_det_b.bin").string();
  for (const auto& path : {a, b}) {
    Rng rng(mix_seed(77, 0));
    const auto out = prepare_scene_examples(f.scene, f.model, f.gt, rng);
    ASSERT_EQ(out.examples.size(), 110u);
    int pos = 0;
    for (const auto& ex : out.examples) pos += ex.class_label;
    EXPECT_EQ(pos, 50);  // 20 + 30 positives, 30 + 30 negatives
    DatasetHeader h;
    h.num_keypoints = static_cast<std::uint32_t>(f.model.num_keypoints());
    write_dataset(path, h, out.examples);
  }
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(fa)), {}), sb((std::istreambuf_iterator<char>(fb)), {});
  EXPECT_GT(sa.size(), 110u * 2048u * 30u);
  EXPECT_TRUE(sa == sb);
  std::filesystem::remove(a);
  std::filesystem::remove(b);
}

LabeledExample random_example(Rng& rng, std::size_t n, bool color, std::uint16_t k) {
  LabeledExample ex;
  ex.has_color = color;
  ex.class_label = static_cast<std::uint8_t>(uniform_index(rng, 2));
  ex.points.resize(n);
  ex.seg_labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& p = ex.points[i];
    for (auto& v : p.position) v = float(gaussian(rng, 30));
    for (auto& v : p.normal) v = float(gaussian(rng, 1));
    p.curvature = float(uniform(rng, 0, 0.3));
    if (color)
      for (auto& v : p.color) v = float(uniform(rng, 0, 1));
    ex.seg_labels[i] = static_cast<std::uint16_t>(uniform_index(rng, k + 1));
  }
  ex.meta.kind = static_cast<ExampleKind>(uniform_index(rng, 6));
  ex.meta.scene_id = static_cast<std::uint32_t>(uniform_index(rng, 1000));
  ex.meta.anchor = Vec3(gaussian(rng, 100), gaussian(rng, 100), gaussian(rng, 100));
  ex.meta.centroid = Vec3(gaussian(rng, 100), gaussian(rng, 100), gaussian(rng, 100));
  return ex;
}

void expect_same(const LabeledExample& a, const LabeledExample& b) {
  ASSERT_EQ(a.size(), b.size());
  EXPECT_EQ(a.class_label, b.class_label);
  EXPECT_EQ(a.has_color, b.has_color);
  EXPECT_EQ(a.seg_labels, b.seg_labels);
  EXPECT_EQ(a.meta.kind, b.meta.kind);
  EXPECT_EQ(a.meta.scene_id, b.meta.scene_id);
  EXPECT_EQ(a.meta.anchor, b.meta.anchor);
  EXPECT_EQ(a.meta.centroid, b.meta.centroid);
  EXPECT_EQ(std::memcmp(a.points.data(), b.points.data(), a.size() * sizeof(ExamplePoint)), 0);
}

TEST(DatasetIo, RoundTripIsBitIdentical) {
  Rng rng(18);
  for (bool color : {false, true}) {
    std::vector<LabeledExample> exs;
    for (int i = 0; i < 110; ++i) exs.push_back(random_example(rng, 2048, color, 40));
    DatasetHeader h{40, color, false, 1234567890123ULL, 2048};
    const auto path = (std::filesystem::temp_directory_path() / "pv_rt.bin").string();
    write_dataset(path, h, exs);
    DatasetHeader back_h;
    const auto back = read_dataset(path, &back_h);
    EXPECT_EQ(back_h, h);
    ASSERT_EQ(back.size(), exs.size());
    for (std::size_t i = 0; i < exs.size(); ++i) expect_same(exs[i], back[i]);
    std::filesystem::remove(path);
  }
}

TEST(DatasetIo, TruncatedFileNamesRecord) {
  Rng rng(19);
  std::vector<LabeledExample> exs;
  for (int i = 0; i < 8; ++i) exs.push_back(random_example(rng, 64, true, 5));
  const auto path = (std::filesystem::temp_directory_path() / "pv_trunc.bin").string();
  write_dataset(path, {5, true, true, 1, 64}, exs);
  const auto full = std::filesystem::file_size(path);
  const auto rec = 4 + detail::record_payload_bytes({5, true, true, 1, 64});
  std::filesystem::resize_file(path, full - rec / 2 - 3 * rec);  // cut inside record 4
  try {
    read_dataset(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kParse);
    EXPECT_NE(std::string(e.what()).find("record 4"), std::string::npos) << e.what();
  }
  std::ofstream(path, std::ios::binary) << "NOPE";
  EXPECT_THROW(DatasetReader{path}, Error);
  std::filesystem::remove(path);
}

TEST(DatasetIo, LabelOutOfRangeRejected) {
  Rng rng(20);
  auto ex = random_example(rng, 16, false, 3);
  ex.seg_labels[0] = 4;
  const auto path = (std::filesystem::temp_directory_path() / "pv_bad.bin").string();
  DatasetWriter w(path, {3, false, true, 0, 16});
  EXPECT_THROW(w.write(ex), Error);
  std::filesystem::remove(path);
}

TEST(DatasetIo, StreamingReadHoldsOneRecord) {
  Rng rng(21);
  const DatasetHeader h{10, false, true, 5, 32};
  const auto path = (std::filesystem::temp_directory_path() / "pv_stream.bin").string();
  {
    DatasetWriter w(path, h);
    const auto ex = random_example(rng, 32, false, 10);
    for (int i = 0; i < 10000; ++i) w.write(ex);
  }
  DatasetReader r(path);
  LabeledExample ex;
  std::size_t n = 0, max_cap = 0;
  while (r.next(ex)) {
    ++n;
    max_cap = std::max(max_cap, r.buffer_capacity());
  }
  EXPECT_EQ(n, 10000u);
  EXPECT_EQ(max_cap, detail::record_payload_bytes(h));
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace pointvote
