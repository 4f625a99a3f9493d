#include <filesystem>

#include <gtest/gtest.h>

#include "pointvote/model.hpp"
#include "test_shapes.hpp"

namespace pointvote {
namespace {

using testing::make_point;

double min_pairwise(const std::vector<Keypoint>& kps) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < kps.size(); ++i)
    for (std::size_t j = i + 1; j < kps.size(); ++j) best = std::min(best, (kps[i].position - kps[j].position).norm());
  return best;
}

TEST(SampleKeypoints, SinglePoint) {
  PointCloud c;
  c.has_normals = true;
  c.points.push_back(make_point({1, 2, 3}));
  const auto kps = sample_keypoints(c, 25);
  ASSERT_EQ(kps.size(), 1u);
  EXPECT_EQ(kps[0].position, Vec3(1, 2, 3));
}

TEST(SampleKeypoints, PlanarPatch) {
  const auto plane = testing::plane_grid(100, 1);
  const auto kps = sample_keypoints(plane, 25);
  EXPECT_GE(kps.size(), 16u);
  EXPECT_LE(kps.size(), 25u);
  EXPECT_GE(min_pairwise(kps), 12.5);
}

TEST(SampleKeypoints, SphereCountBand) {
  const auto sphere = testing::sphere_cloud(60.0, 20000);
  const auto kps = sample_keypoints(sphere, 25);
  EXPECT_GE(kps.size(), 40u);
  EXPECT_LE(kps.size(), 120u);
}

TEST(SampleKeypoints, PositionsAreSurfacePoints) {
  Rng rng(1);
  const auto cloud = testing::l_block_random(rng);
  const auto kps = sample_keypoints(cloud, 25);
  for (const auto& k : kps) {
    bool found = false;
    for (const auto& p : cloud.points) found = found || (p.position == k.position && p.normal == k.normal);
    EXPECT_TRUE(found);
  }
  EXPECT_GE(min_pairwise(kps), 12.5);
}

TEST(SampleKeypoints, RejectsEmptyOrNormalFreeCloud) {
  EXPECT_THROW(sample_keypoints(PointCloud{}, 25), Error);
  PointCloud c;
  c.points.push_back(make_point({0, 0, 0}));
  EXPECT_THROW(sample_keypoints(c, 25), Error);
}

TEST(ReduceSymmetric, NoneIsIdentity) {
  std::vector<Keypoint> kps = {{Vec3(1, 2, 3), Vec3::UnitX()}, {Vec3(4, 5, 6), Vec3::UnitY()}};
  const auto out = reduce_symmetric_keypoints(kps, SymmetryDescriptor::none(), 12.5);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[1].position, kps[1].position);
}

TEST(ReduceSymmetric, RingCollapsesToAxisPoint) {
  std::vector<Keypoint> ring;
  for (int i = 0; i < 12; ++i) {
    const double a = 2 * kPi * i / 12;
    ring.push_back({Vec3(40 * std::cos(a), 40 * std::sin(a), 30), Vec3(std::cos(a), std::sin(a), 0)});
  }
  const auto out = reduce_symmetric_keypoints(ring, SymmetryDescriptor::revolution(Vec3::UnitZ(), Vec3::Zero()), 12.5);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_NEAR((out[0].position - Vec3(0, 0, 30)).norm(), 0.0, 1e-9);
}

TEST(ReduceSymmetric, RevolutionKeypointsOnAxisAndIdempotent) {
  // Cylinder surface: rings at several heights plus caps.
  PointCloud cyl;
  cyl.has_normals = true;
  for (int h = 0; h <= 40; ++h)
    for (int a = 0; a < 120; ++a) {
      const double t = 2 * kPi * a / 120;
      cyl.points.push_back(make_point({30 * std::cos(t), 30 * std::sin(t), h * 2.5}, {std::cos(t), std::sin(t), 0}));
    }
  const auto sym = SymmetryDescriptor::revolution(Vec3::UnitZ(), Vec3::Zero());
  const auto kps = sample_keypoints(cyl, 25);
  const auto once = reduce_symmetric_keypoints(kps, sym, 12.5);
  ASSERT_LT(once.size(), kps.size());
  for (const auto& k : once) EXPECT_LT(Vec3(k.position.x(), k.position.y(), 0).norm(), 1e-6);
  const auto twice = reduce_symmetric_keypoints(once, sym, 12.5);
  ASSERT_EQ(twice.size(), once.size());
  for (std::size_t i = 0; i < once.size(); ++i) EXPECT_EQ(twice[i].position, once[i].position);
}

// Orbit oracle: for each kept keypoint, every input keypoint is either kept or
// maps (under some symmetry rotation) onto a kept one.
TEST(ReduceSymmetric, TwoFoldBoxHalvesKeypoints) {
  const auto sym = SymmetryDescriptor::cyclic(2, Vec3::UnitZ(), Vec3::Zero());
  std::vector<Keypoint> kps;
  Rng rng(3);
  for (int i = 0; i < 10; ++i) {
    const Vec3 p(uniform(rng, 20, 60), uniform(rng, -40, 40), uniform(rng, -20, 20) + i * 60);
    kps.push_back({p, Vec3::UnitX()});
    kps.push_back({Vec3(-p.x(), -p.y(), p.z()), -Vec3::UnitX()});
  }
  kps.push_back({Vec3(0, 0, 1000), Vec3::UnitZ()});  // on the axis
  const auto out = reduce_symmetric_keypoints(kps, sym, 12.5);
  EXPECT_EQ(out.size(), 11u);
  const Mat3 r = axis_angle(Vec3::UnitZ(), kPi);
  for (const auto& k : kps) {
    bool covered = false;
    for (const auto& o : out) covered = covered || (o.position - k.position).norm() <= 12.5 || (o.position - r * k.position).norm() <= 12.5;
    EXPECT_TRUE(covered);
  }
  const auto again = reduce_symmetric_keypoints(out, sym, 12.5);
  EXPECT_EQ(again.size(), out.size());
}

TEST(ModelDiameter, Cases) {
  PointCloud cube;
  for (int i = 0; i < 8; ++i) cube.points.push_back(make_point({double(i & 1), double((i >> 1) & 1), double((i >> 2) & 1)}));
  EXPECT_NEAR(model_diameter(cube), std::sqrt(3.0), 1e-15);
  PointCloud one;
  one.points.push_back(make_point({5, 5, 5}));
  EXPECT_EQ(model_diameter(one), 0.0);
  EXPECT_THROW(model_diameter(PointCloud{}), Error);
  Rng rng(9);
  PointCloud blob;
  Vec3 lo = Vec3::Constant(1e9), hi = Vec3::Constant(-1e9);
  for (int i = 0; i < 5000; ++i) {
    Vec3 p(gaussian(rng, 40), gaussian(rng, 30), gaussian(rng, 20));
    blob.points.push_back(make_point(p));
    for (int k = 0; k < 3; ++k) {
      lo[k] = std::min(lo[k], p[k]);
      hi[k] = std::max(hi[k], p[k]);
    }
  }
  EXPECT_DOUBLE_EQ(model_diameter(blob), (hi - lo).norm());
}

TEST(NearestKeypointLabels, SelfAssignmentTiesAndScan) {
  std::vector<Keypoint> kps = {{Vec3(0, 0, 0)}, {Vec3(10, 0, 0)}, {Vec3(0, 10, 0)}};
  PointCloud self;
  for (const auto& k : kps) self.points.push_back(make_point(k.position));
  EXPECT_EQ(nearest_keypoint_labels(self, kps), (std::vector<int>{1, 2, 3}));
  PointCloud mid;
  mid.points.push_back(make_point({5, 0, 0}));
  EXPECT_EQ(nearest_keypoint_labels(mid, kps), std::vector<int>{1});

  Rng rng(4);
  std::vector<Keypoint> many;
  for (int i = 0; i < 50; ++i) many.push_back({Vec3(uniform(rng, 0, 100), uniform(rng, 0, 100), uniform(rng, 0, 100))});
  PointCloud cloud;
  for (int i = 0; i < 2000; ++i) cloud.points.push_back(make_point({uniform(rng, 0, 100), uniform(rng, 0, 100), uniform(rng, 0, 100)}));
  const auto labels = nearest_keypoint_labels(cloud, many);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    int best = 0;
    for (int k = 1; k < 50; ++k)
      if ((many[k].position - cloud.points[i].position).squaredNorm() < (many[best].position - cloud.points[i].position).squaredNorm()) best = k;
    ASSERT_EQ(labels[i], best + 1);
  }
}

TEST(ObjectModelIo, SaveLoadRoundTrip) {
  Rng rng(2);
  auto model = make_object_model(testing::l_block_random(rng), 25.0,
                                 SymmetryDescriptor::cyclic(2, Vec3::UnitZ(), Vec3(1, 2, 3)));
  const auto path = (std::filesystem::temp_directory_path() / "pv_model.ply").string();
  save_model(path, model);
  const auto back = load_model(path);
  EXPECT_EQ(back.num_keypoints(), model.num_keypoints());
  EXPECT_DOUBLE_EQ(back.diameter, model.diameter);
  EXPECT_EQ(back.symmetry.kind, SymmetryDescriptor::Kind::kCyclic);
  EXPECT_EQ(back.symmetry.fold, 2);
  for (std::size_t i = 0; i < model.num_keypoints(); ++i) {
    EXPECT_EQ(back.keypoints[i].position, model.keypoints[i].position);
  }
  std::filesystem::remove(path);
  std::filesystem::remove(model_sidecar_path(path));
}

TEST(MeshToCloud, SparseMeshIsResampled) {
  PlyMesh mesh;
  for (Vec3 v : {Vec3(0, 0, 0), Vec3(200, 0, 0), Vec3(200, 200, 0), Vec3(0, 200, 0)}) mesh.cloud.points.push_back(make_point(v));
  mesh.faces = {{0, 1, 2}, {0, 2, 3}};
  Rng rng(1);
  const auto cloud = mesh_to_cloud(mesh, 25.0, rng);
  // 40000 mm^2 / 625 = 64 cells -> 256 samples.
  EXPECT_EQ(cloud.size(), 256u);
  EXPECT_TRUE(cloud.has_normals);
  for (const auto& p : cloud.points) EXPECT_NEAR(std::abs(p.normal.z()), 1.0, 1e-12);
}

}  // namespace
}  // namespace pointvote
