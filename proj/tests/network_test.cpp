#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "pointvote/network.hpp"
#include "pointvote/network_io.hpp"

namespace pointvote {
namespace {

NetworkConfig tiny_config(int k = 2) {
  NetworkConfig c;
  c.num_points = 8;
  c.encoder = {4, 8};
  c.classifier = {5, 1};
  c.segmenter = {6, 1};
  c.skip_layer = 0;
  c.normalize_input = false;
  return c.with_keypoints(k);
}

template <typename T>
MatX<T> random_input(Rng& rng, int channels, int points) {
  MatX<T> x(channels, points);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = static_cast<T>(gaussian(rng, 1.0));
  return x;
}

template <typename T>
void randomize(PointNet<T>& net, Rng& rng, double bias_sigma = 0.1) {
  net.init_random(rng());
  for (auto* g : {&net.params().enc, &net.params().cls, &net.params().seg})
    for (auto& l : *g)
      for (Eigen::Index i = 0; i < l.b.size(); ++i) l.b[i] = static_cast<T>(gaussian(rng, bias_sigma));
}

std::vector<std::uint16_t> random_labels(Rng& rng, int n, int k) {
  std::vector<std::uint16_t> out(static_cast<std::size_t>(n));
  for (auto& l : out) l = static_cast<std::uint16_t>(uniform_index(rng, static_cast<std::size_t>(k + 1)));
  return out;
}

TEST(Forward, ZeroWeightsGiveHalf) {
  PointNet<float> net(NetworkConfig{}.with_keypoints(40));
  Rng rng(1);
  ForwardCache<float> c;
  net.forward(random_input<float>(rng, 7, 2048), c);
  EXPECT_EQ(c.prob, 0.5f);
  EXPECT_EQ(c.seg.back().rows(), 41);
  EXPECT_TRUE((c.seg.back().array() == 0.0f).all());
}

TEST(Forward, DuplicatedPointGivesIdenticalRows) {
  NetworkConfig cfg;
  cfg.encoder = {16, 32, 64};
  cfg.classifier = {32, 1};
  cfg.segmenter = {32, 1};
  cfg.with_keypoints(10);
  PointNet<float> net(cfg);
  Rng rng(2);
  randomize(net, rng);
  const auto one = random_input<float>(rng, 7, 1);
  const MatX<float> x = one.replicate(1, 2048);
  ForwardCache<float> c;
  net.forward(x, c);
  const auto& s = c.seg.back();
  for (Eigen::Index j = 1; j < s.cols(); ++j) ASSERT_TRUE(s.col(j) == s.col(0)) << j;
}

template <typename T>
void check_permutation(const NetworkConfig& cfg, std::uint64_t seed) {
  PointNet<T> net(cfg);
  Rng rng(seed);
  randomize(net, rng);
  const auto x = random_input<T>(rng, cfg.in_channels, cfg.num_points);
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(cfg.num_points));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  MatX<T> xp(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) xp.col(j) = x.col(perm[static_cast<std::size_t>(j)]);
  ForwardCache<T> a, b;
  net.forward(x, a);
  net.forward(xp, b);
  ASSERT_EQ(a.prob, b.prob);
  ASSERT_EQ(a.logit, b.logit);
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    ASSERT_TRUE(b.seg.back().col(j) == a.seg.back().col(perm[static_cast<std::size_t>(j)])) << j;
  }
}

TEST(Forward, PermutationCovariantBitExact) {
  check_permutation<float>(NetworkConfig{}.with_keypoints(40), 3);
  NetworkConfig small;
  small.encoder = {16, 32, 64};
  small.classifier = {32, 1};
  small.segmenter = {32, 1};
  small.in_channels = 10;
  small.with_keypoints(33);
  for (std::uint64_t s = 0; s < 5; ++s) check_permutation<float>(small, 10 + s);
  small.num_points = 1001;  // odd width exercises partial GEMM panels
  for (std::uint64_t s = 0; s < 5; ++s) check_permutation<float>(small, 20 + s);
  check_permutation<double>(tiny_config(), 4);
}

TEST(Forward, ShapeMismatchIsConfigError) {
  PointNet<float> net(tiny_config());
  ForwardCache<float> c;
  try {
    net.forward(MatX<float>::Zero(10, 8), c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfig);
  }
  LabeledExample ex;
  ex.points.resize(7);
  ex.seg_labels.resize(7);
  EXPECT_THROW(net.make_input(ex), Error);
}

TEST(NetworkConfig, Validation) {
  EXPECT_THROW(PointNet<float>(NetworkConfig{}), Error);  // K unset
  auto c = tiny_config();
  c.classifier.back() = 2;
  EXPECT_THROW(PointNet<float>{c}, Error);
  c = tiny_config();
  c.segmenter.back() = 7;
  EXPECT_THROW(PointNet<float>{c}, Error);
  c = tiny_config();
  c.skip_layer = 2;
  EXPECT_THROW(PointNet<float>{c}, Error);
  c = tiny_config();
  c.in_channels = 6;
  EXPECT_THROW(PointNet<float>{c}, Error);
}

// Plain scalar implementation, no max-shift, long double.
long double oracle_loss(double logit, int y, const MatX<double>& z, const std::vector<std::uint16_t>& labels,
                        double w_cls, double w_seg) {
  const long double eps = 1e-12L;
  const long double p = 1.0L / (1.0L + std::exp(-static_cast<long double>(logit)));
  const long double bce = -(y * std::log(std::max(p, eps)) + (1 - y) * std::log(std::max(1.0L - p, eps)));
  long double ce = 0;
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    long double denom = 0;
    for (Eigen::Index r = 0; r < z.rows(); ++r) denom += std::exp(static_cast<long double>(z(r, j)));
    const long double py = std::exp(static_cast<long double>(z(labels[static_cast<std::size_t>(j)], j))) / denom;
    ce += -std::log(std::max(py, eps));
  }
  return w_cls * bce + w_seg * ce / z.cols();
}

TEST(JointLoss, PerfectPredictionIsNearZero) {
  MatX<double> z = MatX<double>::Constant(41, 100, -40.0);
  std::vector<std::uint16_t> labels(100);
  for (int j = 0; j < 100; ++j) {
    labels[j] = static_cast<std::uint16_t>(j % 41);
    z(labels[j], j) = 40.0;
  }
  EXPECT_LT(joint_loss<double>(40.0, 1, z, labels, 0.15, 0.85).total, 1e-6);
  EXPECT_LT(joint_loss<double>(-40.0, 0, z, labels, 0.15, 0.85).total, 1e-6);
}

TEST(JointLoss, UniformSegmentationIsLogClasses) {
  const MatX<double> z = MatX<double>::Constant(41, 2048, 0.3);
  Rng rng(5);
  const auto labels = random_labels(rng, 2048, 40);
  const auto lv = joint_loss<double>(0.0, 1, z, labels, 0.15, 0.85);
  EXPECT_NEAR(lv.seg, std::log(41.0), 1e-9);
  EXPECT_NEAR(lv.cls, std::log(2.0), 1e-15);
}

TEST(JointLoss, MatchesScalarOracle) {
  Rng rng(6);
  for (int t = 0; t < 100; ++t) {
    const int k = 1 + static_cast<int>(uniform_index(rng, 40));
    const int n = 1 + static_cast<int>(uniform_index(rng, 300));
    MatX<double> z(k + 1, n);
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = gaussian(rng, 3.0);
    const auto labels = random_labels(rng, n, k);
    const double logit = gaussian(rng, 4.0);
    const int y = static_cast<int>(uniform_index(rng, 2));
    const double w = uniform(rng, 0, 1);
    const auto lv = joint_loss<double>(logit, y, z, labels, w, 1 - w);
    const long double ref = oracle_loss(logit, y, z, labels, w, 1 - w);
    EXPECT_NEAR(lv.total, static_cast<double>(ref), 1e-12 * std::max(1.0, std::abs(double(ref))));
    EXPECT_GE(lv.total, 0.0);
    const auto cls_only = joint_loss<double>(logit, y, z, labels, 1.0, 0.0);
    EXPECT_DOUBLE_EQ(cls_only.total, lv.cls);
  }
}

TEST(JointLoss, ClampBoundsExtremeLogits) {
  const MatX<double> z = MatX<double>::Zero(3, 1);
  const std::vector<std::uint16_t> labels = {0};
  const auto lv = joint_loss<double>(-1000.0, 1, z, labels, 1.0, 0.0);
  EXPECT_NEAR(lv.cls, -std::log(1e-12), 1e-9);
}

// Everything that decides which piece of the piecewise-linear net is active.
template <typename T>
std::vector<std::int64_t> activation_pattern(const ForwardCache<T>& c) {
  std::vector<std::int64_t> out;
  for (const auto& m : c.enc)
    for (Eigen::Index i = 0; i < m.size(); ++i) out.push_back(m.data()[i] > 0);
  for (auto a : c.argmax) out.push_back(a);
  for (std::size_t l = 0; l + 1 < c.cls.size(); ++l)
    for (Eigen::Index i = 0; i < c.cls[l].size(); ++i) out.push_back(c.cls[l][i] > 0);
  for (std::size_t l = 0; l + 1 < c.seg.size(); ++l)
    for (Eigen::Index i = 0; i < c.seg[l].size(); ++i) out.push_back(c.seg[l].data()[i] > 0);
  return out;
}

struct Batch {
  std::vector<MatX<double>> x;
  std::vector<int> y;
  std::vector<std::vector<std::uint16_t>> labels;
};

double batch_loss(const PointNet<double>& net, const Batch& b, double w_cls, std::vector<std::int64_t>* pattern) {
  double sum = 0;
  if (pattern) pattern->clear();
  for (std::size_t i = 0; i < b.x.size(); ++i) {
    ForwardCache<double> c;
    net.forward(b.x[i], c);
    sum += joint_loss<double>(c.logit, b.y[i], c.seg.back(), b.labels[i], w_cls, 1 - w_cls).total;
    if (pattern) {
      const auto p = activation_pattern(c);
      pattern->insert(pattern->end(), p.begin(), p.end());
    }
  }
  return sum / static_cast<double>(b.x.size());
}

NetParams<double> batch_gradient(const PointNet<double>& net, const Batch& b, double w_cls) {
  auto g = NetParams<double>::zeros(net.config());
  for (std::size_t i = 0; i < b.x.size(); ++i) {
    ForwardCache<double> c;
    net.forward(b.x[i], c);
    double dl = 0;
    MatX<double> ds;
    joint_loss<double>(c.logit, b.y[i], c.seg.back(), b.labels[i], w_cls, 1 - w_cls, &dl, &ds);
    net.backward(c, dl, ds, g);
  }
  for (auto& s : g.tensors())
    for (auto& v : s) v /= static_cast<double>(b.x.size());
  return g;
}

void gradient_check(const NetworkConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  PointNet<double> net(cfg);
  randomize(net, rng);
  Batch b;
  for (int i = 0; i < 2; ++i) {
    b.x.push_back(random_input<double>(rng, cfg.in_channels, cfg.num_points));
    b.y.push_back(i);
    b.labels.push_back(random_labels(rng, cfg.num_points, cfg.num_keypoints));
  }
  const double w_cls = 0.15;
  const auto g = batch_gradient(net, b, w_cls);
  std::vector<std::int64_t> base, plus, minus;
  batch_loss(net, b, w_cls, &base);
  const double h = 1e-4;
  auto params = net.params().tensors();
  const auto grads = g.tensors();
  int checked = 0, skipped = 0;
  double worst = 0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    for (std::size_t i = 0; i < params[t].size(); ++i) {
      const double orig = params[t][i];
      params[t][i] = orig + h;
      const double lp = batch_loss(net, b, w_cls, &plus);
      params[t][i] = orig - h;
      const double lm = batch_loss(net, b, w_cls, &minus);
      params[t][i] = orig;
      if (plus != base || minus != base) {
        ++skipped;  // finite difference straddles a ReLU or argmax switch
        continue;
      }
      const double fd = (lp - lm) / (2 * h);
      const double a = grads[t][i];
      const double rel = std::abs(a - fd) / std::max(std::abs(a) + std::abs(fd), 1e-7);
      worst = std::max(worst, rel);
      EXPECT_LT(rel, 1e-4) << "tensor " << t << " index " << i << " analytic " << a << " fd " << fd;
      ++checked;
    }
  }
  EXPECT_GT(checked, 10 * std::max(skipped, 1)) << "too many kink crossings";
  ::testing::Test::RecordProperty("worst_rel_err", std::to_string(worst));
}

TEST(Backward, GradientMatchesFiniteDifferences) {
  gradient_check(tiny_config(), 7);
  Rng rng(8);
  for (int t = 0; t < 3; ++t) {
    NetworkConfig c;
    c.num_points = 4 + static_cast<int>(uniform_index(rng, 9));
    c.in_channels = uniform_index(rng, 2) ? 10 : 7;
    c.encoder.clear();
    const int layers = 2 + static_cast<int>(uniform_index(rng, 2));
    for (int l = 0; l < layers; ++l) c.encoder.push_back(2 + static_cast<int>(uniform_index(rng, 7)));
    c.skip_layer = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(layers - 1)));
    c.classifier = {3 + static_cast<int>(uniform_index(rng, 4)), 1};
    c.segmenter = {3 + static_cast<int>(uniform_index(rng, 4)), 4 + static_cast<int>(uniform_index(rng, 3)), 1};
    c.normalize_input = false;
    c.with_keypoints(1 + static_cast<int>(uniform_index(rng, 4)));
    gradient_check(c, 100 + static_cast<std::uint64_t>(t));
  }
}

TEST(Backward, ZeroAtAnalyticMinimum) {
  // Zero weights make every hidden unit 0, so the outputs are the final
  // biases. Setting them to the label log-frequencies is a stationary point.
  const auto cfg = tiny_config(2);
  PointNet<double> net(cfg);
  Batch b;
  Rng rng(9);
  b.labels = {{0, 1, 2, 2, 1, 2, 2, 0}, {2, 2, 1, 0, 2, 2, 1, 2}};
  for (int i = 0; i < 2; ++i) {
    b.x.push_back(random_input<double>(rng, 7, 8));
    b.y.push_back(i);
  }
  const double freq[3] = {3.0 / 16, 4.0 / 16, 9.0 / 16};
  for (int r = 0; r < 3; ++r) net.params().seg.back().b[r] = std::log(freq[r]);
  net.params().cls.back().b[0] = 0.0;
  const auto g = batch_gradient(net, b, 0.15);
  for (const auto& s : g.tensors())
    for (double v : s) EXPECT_LT(std::abs(v), 1e-6);
}

TEST(Backward, PooledGradientReachesOnlyArgmaxPoints) {
  NetworkConfig cfg;
  cfg.encoder = {16, 32, 24};
  cfg.classifier = {8, 1};
  cfg.segmenter = {8, 1};
  cfg.num_points = 256;
  cfg.with_keypoints(3);
  PointNet<double> net(cfg);
  Rng rng(10);
  randomize(net, rng);
  ForwardCache<double> c;
  net.forward(random_input<double>(rng, 7, 256), c);
  MatX<double> dx;
  auto g = NetParams<double>::zeros(cfg);
  net.backward(c, 1.0, MatX<double>(), g, &dx);
  std::vector<bool> is_arg(256, false);
  for (auto a : c.argmax) is_arg[static_cast<std::size_t>(a)] = true;
  int nonzero = 0;
  for (Eigen::Index j = 0; j < 256; ++j) {
    if (!is_arg[static_cast<std::size_t>(j)]) {
      ASSERT_TRUE((dx.col(j).array() == 0.0).all()) << j;
    } else {
      nonzero += dx.col(j).squaredNorm() > 0;
    }
  }
  EXPECT_GT(nonzero, 0);
}

// Learnable toy task: class = whether curvature channel is raised; segment
// label = sign pattern of x and y (4 classes, K = 3).
std::vector<LabeledExample> toy_dataset(Rng& rng, int count, int points) {
  std::vector<LabeledExample> out;
  for (int e = 0; e < count; ++e) {
    LabeledExample ex;
    ex.class_label = static_cast<std::uint8_t>(e % 2);
    ex.points.resize(static_cast<std::size_t>(points));
    ex.seg_labels.resize(static_cast<std::size_t>(points));
    for (int i = 0; i < points; ++i) {
      auto& p = ex.points[static_cast<std::size_t>(i)];
      for (auto& v : p.position) v = static_cast<float>(uniform(rng, -1, 1));
      p.normal = {0, 0, 1};
      p.curvature = ex.class_label ? 0.8f : 0.0f;
      ex.seg_labels[static_cast<std::size_t>(i)] =
          static_cast<std::uint16_t>((p.position[0] > 0 ? 1 : 0) + (p.position[1] > 0 ? 2 : 0));
    }
    out.push_back(std::move(ex));
  }
  return out;
}

NetworkConfig toy_config() {
  NetworkConfig c;
  c.num_points = 64;
  c.encoder = {16, 32, 32};
  c.classifier = {16, 1};
  c.segmenter = {32, 1};
  c.normalize_input = false;
  return c.with_keypoints(3);
}

TEST(Train, ToyDatasetOverfits) {
  Rng rng(11);
  const auto data = toy_dataset(rng, 10, 64);
  PointNet<float> net(toy_config());
  net.init_random(12);
  TrainConfig tc;
  tc.epochs = 50;
  tc.batch_size = 1;
  tc.learning_rate = 0.01;
  const double initial = evaluate_loss(net, data, tc).total;
  const auto log = train(net, data, tc);
  const double final_loss = evaluate_loss(net, data, tc).total;
  ASSERT_EQ(log.epoch_loss.size(), 50u);
  EXPECT_LT(final_loss, 0.1 * initial) << initial << " -> " << final_loss;
}

TEST(Train, SeedFixedRunsAreIdentical) {
  Rng rng(13);
  const auto data = toy_dataset(rng, 40, 64);
  TrainConfig tc;
  tc.epochs = 3;
  tc.seed = 99;
  std::vector<TrainLog> logs;
  std::vector<NetParams<float>> weights;
  for (int run = 0; run < 2; ++run) {
    PointNet<float> net(toy_config());
    net.init_random(5);
    logs.push_back(train(net, data, tc));
    weights.push_back(net.params());
  }
  for (std::size_t e = 0; e < 3; ++e) EXPECT_EQ(logs[0].epoch_loss[e].total, logs[1].epoch_loss[e].total);
  const auto a = weights[0].tensors(), b = weights[1].tensors();
  for (std::size_t t = 0; t < a.size(); ++t)
    ASSERT_EQ(std::memcmp(a[t].data(), b[t].data(), a[t].size_bytes()), 0);
}

TEST(Train, ThreadedRunIsDeterministic) {
  Rng rng(14);
  const auto data = toy_dataset(rng, 40, 64);
  TrainConfig tc;
  tc.epochs = 2;
  tc.threads = 3;
  std::vector<double> finals;
  for (int run = 0; run < 2; ++run) {
    PointNet<float> net(toy_config());
    net.init_random(5);
    finals.push_back(train(net, data, tc).epoch_loss.back().total);
  }
  EXPECT_EQ(finals[0], finals[1]);
}

TEST(Train, ZeroLearningRateFreezesWeights) {
  Rng rng(15);
  const auto data = toy_dataset(rng, 20, 64);
  PointNet<float> net(toy_config());
  net.init_random(6);
  const auto before = net.params();
  TrainConfig tc;
  tc.epochs = 4;
  tc.learning_rate = 0.0;
  train(net, data, tc);
  const auto a = before.tensors();
  const auto b = std::as_const(net).params().tensors();
  for (std::size_t t = 0; t < a.size(); ++t)
    ASSERT_EQ(std::memcmp(a[t].data(), b[t].data(), a[t].size_bytes()), 0);
}

TEST(Train, RejectsBadConfig) {
  PointNet<float> net(toy_config());
  TrainConfig tc;
  EXPECT_THROW(train(net, {}, tc), Error);
  tc.w_cls = 0.5;
  Rng rng(1);
  EXPECT_THROW(train(net, toy_dataset(rng, 2, 64), tc), Error);
}

TEST(WeightsIo, RoundTripGivesIdenticalOutputs) {
  NetworkConfig cfg = toy_config();
  cfg.normalize_input = true;
  cfg.input_scale = 72.5;
  PointNet<float> net(cfg);
  Rng rng(16);
  randomize(net, rng);
  const auto path = (std::filesystem::temp_directory_path() / "pv_weights.bin").string();
  save_weights(path, net);
  const auto back = load_weights<float>(path, 3);
  EXPECT_EQ(back.config(), cfg);
  const auto data = toy_dataset(rng, 3, 64);
  for (const auto& ex : data) {
    ForwardCache<float> a, b;
    net.forward(net.make_input(ex), a);
    back.forward(back.make_input(ex), b);
    EXPECT_EQ(a.prob, b.prob);
    EXPECT_TRUE(a.seg.back() == b.seg.back());
  }
  std::filesystem::remove(path);
}

TEST(WeightsIo, WrongKeypointCountIsConfigError) {
  PointNet<float> net(toy_config());
  const auto path = (std::filesystem::temp_directory_path() / "pv_weights_k.bin").string();
  save_weights(path, net);
  try {
    load_weights<float>(path, 4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfig);
  }
  std::filesystem::remove(path);
}

TEST(WeightsIo, CorruptedByteIsChecksumError) {
  PointNet<float> net(toy_config());
  Rng rng(17);
  randomize(net, rng);
  const auto path = (std::filesystem::temp_directory_path() / "pv_weights_c.bin").string();
  save_weights(path, net);
  const auto size = std::filesystem::file_size(path);
  for (std::uintmax_t offset : {size - 5, size / 2, std::uintmax_t(20)}) {
    save_weights(path, net);
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekg(static_cast<std::streamoff>(offset));
    char c;
    f.read(&c, 1);
    c ^= 0x10;
    f.seekp(static_cast<std::streamoff>(offset));
    f.write(&c, 1);
    f.close();
    try {
      load_weights<float>(path);
      FAIL() << offset;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kChecksum) << offset;
    }
  }
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace pointvote
