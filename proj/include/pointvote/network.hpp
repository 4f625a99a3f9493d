#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "pointvote/common.hpp"
#include "pointvote/dataset.hpp"

namespace pointvote {

// Point-set network: a shared per-point MLP encoder, max-pool to a global
// feature, a logistic classifier on the global feature, and a per-point
// segmenter on [skip feature ; global feature]. ReLU after every hidden
// layer, no normalization layers.

struct NetworkConfig {
  int in_channels = 7;  // xyz, normal, curvature (+ rgb = 10)
  int num_points = 2048;
  int num_keypoints = 0;
  std::vector<int> encoder = {64, 64, 128, 1024};
  std::vector<int> classifier = {512, 256, 1};
  std::vector<int> segmenter = {512, 256, 128, 1};  // last entry forced to K+1 by with_keypoints()
  int skip_layer = 1;  // encoder layer whose output feeds the segmenter
  bool normalize_input = true;
  double input_scale = 1.0;  // xyz divisor when normalize_input

  bool operator==(const NetworkConfig&) const = default;

  NetworkConfig& with_keypoints(int k) {
    num_keypoints = k;
    if (!segmenter.empty()) segmenter.back() = k + 1;
    return *this;
  }

  int skip_width() const { return encoder[static_cast<std::size_t>(skip_layer)]; }
  int global_width() const { return encoder.back(); }

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorCode::kConfig, "network config: " + m); };
    if (in_channels != 7 && in_channels != 10) fail("in_channels must be 7 or 10");
    if (num_points < 1) fail("num_points must be positive");
    if (num_keypoints < 1) fail("num_keypoints must be positive");
    if (encoder.empty() || classifier.empty() || segmenter.empty()) fail("empty layer list");
    for (const auto* v : {&encoder, &classifier, &segmenter})
      for (int w : *v)
        if (w < 1) fail("non-positive width");
    if (classifier.back() != 1) fail("classifier must end in one logit");
    if (segmenter.back() != num_keypoints + 1) fail("segmenter must end in K+1 logits");
    if (skip_layer < 0 || skip_layer >= static_cast<int>(encoder.size())) fail("skip_layer out of range");
    if (normalize_input && !(input_scale > 0)) fail("input_scale must be positive");
  }
};

template <typename T>
using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using VecX = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
struct Dense {
  MatX<T> w;  // out x in
  VecX<T> b;
};

template <typename T>
struct NetParams {
  std::vector<Dense<T>> enc, cls, seg;

  static NetParams zeros(const NetworkConfig& c) {
    NetParams p;
    auto build = [](std::vector<Dense<T>>& layers, const std::vector<int>& widths, int in) {
      for (int w : widths) {
        layers.push_back({MatX<T>::Zero(w, in), VecX<T>::Zero(w)});
        in = w;
      }
    };
    build(p.enc, c.encoder, c.in_channels);
    build(p.cls, c.classifier, c.global_width());
    build(p.seg, c.segmenter, c.skip_width() + c.global_width());
    return p;
  }

  /// All tensors in declaration order: enc, cls, seg; each layer w then b.
  std::vector<std::span<T>> tensors() {
    std::vector<std::span<T>> out;
    for (auto* group : {&enc, &cls, &seg})
      for (auto& l : *group) {
        out.emplace_back(l.w.data(), static_cast<std::size_t>(l.w.size()));
        out.emplace_back(l.b.data(), static_cast<std::size_t>(l.b.size()));
      }
    return out;
  }
  std::vector<std::span<const T>> tensors() const {
    std::vector<std::span<const T>> out;
    for (auto& s : const_cast<NetParams*>(this)->tensors()) out.emplace_back(s.data(), s.size());
    return out;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& s : tensors()) n += s.size();
    return n;
  }

  void set_zero() {
    for (auto& s : tensors()) std::fill(s.begin(), s.end(), T(0));
  }

  NetParams& operator+=(const NetParams& o) {
    auto a = tensors();
    auto b = o.tensors();
    for (std::size_t t = 0; t < a.size(); ++t)
      for (std::size_t i = 0; i < a[t].size(); ++i) a[t][i] += b[t][i];
    return *this;
  }

  template <typename U>
  NetParams<U> cast() const {
    NetParams<U> out;
    auto conv = [](const std::vector<Dense<T>>& src, std::vector<Dense<U>>& dst) {
      for (const auto& l : src) dst.push_back({l.w.template cast<U>(), l.b.template cast<U>()});
    };
    conv(enc, out.enc);
    conv(cls, out.cls);
    conv(seg, out.seg);
    return out;
  }
};

template <typename T>
struct ForwardCache {
  MatX<T> input;
  std::vector<MatX<T>> enc;  // post-ReLU outputs
  VecX<T> global;
  std::vector<Eigen::Index> argmax;  // per global dimension, lowest point index on ties
  std::vector<VecX<T>> cls;  // hidden post-ReLU; last entry is the raw logit
  std::vector<MatX<T>> seg;  // hidden post-ReLU; last entry is the raw logits
  T logit = 0;
  T prob = 0;
  bool has_seg = false;
};

template <typename T>
T sigmoid(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
class PointNet {
 public:
  using Mat = MatX<T>;
  using Vec = VecX<T>;

  PointNet() = default;
  explicit PointNet(NetworkConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    params_ = NetParams<T>::zeros(cfg_);
  }
  PointNet(NetworkConfig cfg, NetParams<T> params) : cfg_(std::move(cfg)), params_(std::move(params)) {
    cfg_.validate();
    check_shapes();
  }

  const NetworkConfig& config() const { return cfg_; }
  NetParams<T>& params() { return params_; }
  const NetParams<T>& params() const { return params_; }

  /// He-uniform weights, zero biases.
  void init_random(std::uint64_t seed) {
    Rng rng(seed);
    for (auto* group : {&params_.enc, &params_.cls, &params_.seg})
      for (auto& l : *group) {
        const double a = std::sqrt(6.0 / static_cast<double>(l.w.cols()));
        for (Eigen::Index i = 0; i < l.w.size(); ++i) l.w.data()[i] = static_cast<T>(uniform(rng, -a, a));
        l.b.setZero();
      }
  }

  template <typename U>
  PointNet<U> cast() const {
    return PointNet<U>(cfg_, params_.template cast<U>());
  }

  /// Channels x points input in network units.
  Mat make_input(const LabeledExample& ex) const {
    if (static_cast<int>(ex.size()) != cfg_.num_points) {
      throw Error(ErrorCode::kConfig, "network expects " + std::to_string(cfg_.num_points) + " points, got " +
                                          std::to_string(ex.size()));
    }
    if (cfg_.in_channels == 10 && !ex.has_color) throw Error(ErrorCode::kConfig, "network expects color channels");
    const T s = cfg_.normalize_input ? T(1.0 / cfg_.input_scale) : T(1);
    Mat x(cfg_.in_channels, cfg_.num_points);
    for (int j = 0; j < cfg_.num_points; ++j) {
      const auto& p = ex.points[static_cast<std::size_t>(j)];
      for (int k = 0; k < 3; ++k) {
        x(k, j) = static_cast<T>(p.position[k]) * s;
        x(3 + k, j) = static_cast<T>(p.normal[k]);
      }
      x(6, j) = static_cast<T>(p.curvature);
      if (cfg_.in_channels == 10)
        for (int k = 0; k < 3; ++k) x(7 + k, j) = static_cast<T>(p.color[k]);
    }
    return x;
  }

  /// Encoder + pooling + classifier; the segmenter runs only if `with_seg`.
  void forward(Mat x, ForwardCache<T>& c, bool with_seg = true) const {
    if (x.rows() != cfg_.in_channels || x.cols() < 1) throw Error(ErrorCode::kConfig, "network input shape mismatch");
    c.input = std::move(x);
    const Eigen::Index n = c.input.cols();
    c.enc.resize(params_.enc.size());
    const Mat* h = &c.input;
    for (std::size_t l = 0; l < params_.enc.size(); ++l) {
      const auto& layer = params_.enc[l];
      apply_weights(layer.w, *h, c.enc[l]);
      bias_relu(c.enc[l], layer.b);
      h = &c.enc[l];
    }
    const Mat& top = c.enc.back();
    const Eigen::Index rows = top.rows();
    c.global = top.col(0);
    // Branch-free running max; strict '>' keeps the lowest index on ties.
    std::vector<std::int32_t> arg(static_cast<std::size_t>(rows), 0);
    T* g = c.global.data();
    std::int32_t* a = arg.data();
    for (Eigen::Index j = 1; j < n; ++j) {
      const T* col = top.col(j).data();
      const auto jj = static_cast<std::int32_t>(j);
      for (Eigen::Index r = 0; r < rows; ++r) {
        const bool gt = col[r] > g[r];
        g[r] = gt ? col[r] : g[r];
        a[r] = gt ? jj : a[r];
      }
    }
    c.argmax.assign(arg.begin(), arg.end());
    c.cls.resize(params_.cls.size());
    const Vec* v = &c.global;
    for (std::size_t l = 0; l < params_.cls.size(); ++l) {
      const auto& layer = params_.cls[l];
      c.cls[l].noalias() = layer.w * *v;
      c.cls[l] += layer.b;
      if (l + 1 < params_.cls.size()) relu(c.cls[l]);
      v = &c.cls[l];
    }
    c.logit = c.cls.back()[0];
    c.prob = sigmoid(c.logit);
    c.has_seg = with_seg;
    if (!with_seg) return;

    c.seg.resize(params_.seg.size());
    const auto& first = params_.seg[0];
    const int sw = cfg_.skip_width();
    const Vec global_part = first.w.rightCols(cfg_.global_width()) * c.global + first.b;
    apply_weights(first.w.leftCols(sw), c.enc[static_cast<std::size_t>(cfg_.skip_layer)], c.seg[0]);
    for (std::size_t l = 1; l < params_.seg.size(); ++l) {
      bias_relu(c.seg[l - 1], l == 1 ? global_part : params_.seg[l - 1].b);
      apply_weights(params_.seg[l].w, c.seg[l - 1], c.seg[l]);
    }
    c.seg.back().colwise() += params_.seg.size() == 1 ? global_part : params_.seg.back().b;
  }

  const Mat& seg_logits(const ForwardCache<T>& c) const { return c.seg.back(); }

  /// Accumulates parameter gradients into `g`. dseg is (K+1) x points; an
  /// empty dseg skips the segmenter. dx, if given, receives the input gradient.
  void backward(const ForwardCache<T>& c, T dlogit, const Mat& dseg, NetParams<T>& g, Mat* dx = nullptr) const {
    const Eigen::Index n = c.input.cols();
    const std::size_t skip = static_cast<std::size_t>(cfg_.skip_layer);
    const int sw = cfg_.skip_width();
    const int gw = cfg_.global_width();
    Vec dg = Vec::Zero(gw);
    Mat dskip = Mat::Zero(sw, n);

    if (c.has_seg && dseg.size() > 0) {
      Mat d = dseg;
      for (std::size_t l = params_.seg.size() - 1; l >= 1; --l) {
        const Mat& in = c.seg[l - 1];
        g.seg[l].w.noalias() += d * in.transpose();
        g.seg[l].b += d.rowwise().sum();
        Mat prev = params_.seg[l].w.transpose() * d;
        relu_mask(prev, in);
        d = std::move(prev);
      }
      const auto& first = params_.seg[0];
      const Vec rs = d.rowwise().sum();
      g.seg[0].w.leftCols(sw).noalias() += d * c.enc[skip].transpose();
      g.seg[0].w.rightCols(gw).noalias() += rs * c.global.transpose();
      g.seg[0].b += rs;
      dskip.noalias() += first.w.leftCols(sw).transpose() * d;
      dg.noalias() += first.w.rightCols(gw).transpose() * rs;
    }

    {
      Vec d = Vec::Constant(1, dlogit);
      for (std::size_t l = params_.cls.size(); l-- > 0;) {
        const Vec& in = l == 0 ? c.global : c.cls[l - 1];
        g.cls[l].w.noalias() += d * in.transpose();
        g.cls[l].b += d;
        Vec prev = params_.cls[l].w.transpose() * d;
        if (l > 0) relu_mask(prev, c.cls[l - 1]);
        d = std::move(prev);
      }
      dg += d;
    }

    // Max-pool routes each global dimension to its argmax point only, so the
    // layers above the skip see a handful of columns.
    std::vector<Eigen::Index> cols(c.argmax.begin(), c.argmax.end());
    std::sort(cols.begin(), cols.end());
    cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
    const auto col_pos = [&](Eigen::Index j) {
      return std::lower_bound(cols.begin(), cols.end(), j) - cols.begin();
    };
    const Eigen::Index m = static_cast<Eigen::Index>(cols.size());
    Mat sparse = Mat::Zero(gw, m);
    for (Eigen::Index r = 0; r < gw; ++r) sparse(r, col_pos(c.argmax[static_cast<std::size_t>(r)])) += dg[r];
    auto gather = [&](const Mat& src) {
      Mat out(src.rows(), m);
      for (Eigen::Index k = 0; k < m; ++k) out.col(k) = src.col(cols[static_cast<std::size_t>(k)]);
      return out;
    };
    for (std::size_t l = params_.enc.size() - 1; l > skip; --l) {
      relu_mask(sparse, gather(c.enc[l]));
      const Mat in = gather(c.enc[l - 1]);
      g.enc[l].w.noalias() += sparse * in.transpose();
      g.enc[l].b += sparse.rowwise().sum();
      sparse = params_.enc[l].w.transpose() * sparse;
    }
    for (Eigen::Index k = 0; k < m; ++k) dskip.col(cols[static_cast<std::size_t>(k)]) += sparse.col(k);

    Mat d = std::move(dskip);
    for (std::size_t l = skip + 1; l-- > 0;) {
      relu_mask(d, c.enc[l]);
      const Mat& in = l == 0 ? c.input : c.enc[l - 1];
      g.enc[l].w.noalias() += d * in.transpose();
      g.enc[l].b += d.rowwise().sum();
      if (l > 0 || dx) {
        Mat prev = params_.enc[l].w.transpose() * d;
        d = std::move(prev);
      }
    }
    if (dx) *dx = std::move(d);
  }

 private:
  // out = w * in, computed so that every column takes the same arithmetic
  // path: the GEMM kernel treats a trailing partial column panel differently,
  // so narrow inputs are zero-padded to a multiple of 8 columns.
  template <typename W>
  static void apply_weights(const W& w, const Mat& in, Mat& out) {
    constexpr Eigen::Index kPanel = 8;
    const Eigen::Index n = in.cols();
    if (n % kPanel == 0) {
      out.resize(w.rows(), n);
      out.noalias() = w * in;
      return;
    }
    const Eigen::Index padded = (n / kPanel + 1) * kPanel;
    Mat tmp_in = Mat::Zero(in.rows(), padded);
    tmp_in.leftCols(n) = in;
    Mat tmp_out(w.rows(), padded);
    tmp_out.noalias() = w * tmp_in;
    out = tmp_out.leftCols(n);
  }

  static void bias_relu(Mat& m, const Vec& b) { m = (m.colwise() + b).cwiseMax(T(0)); }
  static void relu(Mat& m) { m = m.cwiseMax(T(0)); }
  static void relu(Vec& v) { v = v.cwiseMax(T(0)); }
  // Zero gradient where the layer output was clamped (derivative 0 at 0).
  template <typename D, typename A>
  static void relu_mask(D& grad, const A& act) {
    grad = (act.array() > T(0)).select(grad, T(0));
  }

  void check_shapes() const {
    const auto ref = NetParams<T>::zeros(cfg_);
    auto same = [](const std::vector<Dense<T>>& a, const std::vector<Dense<T>>& b) {
      if (a.size() != b.size()) return false;
      for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].w.rows() != b[i].w.rows() || a[i].w.cols() != b[i].w.cols() || a[i].b.size() != b[i].b.size())
          return false;
      return true;
    };
    if (!same(params_.enc, ref.enc) || !same(params_.cls, ref.cls) || !same(params_.seg, ref.seg)) {
      throw Error(ErrorCode::kConfig, "weights do not match network config");
    }
  }

  NetworkConfig cfg_;
  NetParams<T> params_;
};

struct LossValue {
  double total = 0.0;
  double cls = 0.0;  // unweighted binary cross-entropy
  double seg = 0.0;  // unweighted mean categorical cross-entropy
};

constexpr double kLossEpsilon = 1e-12;

/// w_cls * BCE(sigmoid(logit), y) + w_seg * mean_i CE(softmax(logits_i), label_i),
/// with probabilities clamped to >= 1e-12 inside the logs. Optional outputs
/// receive d(loss)/d(logit) and d(loss)/d(seg logits); terms whose clamp is
/// active contribute zero gradient.
template <typename T>
LossValue joint_loss(T logit, int class_label, const MatX<T>& seg_logits, std::span<const std::uint16_t> labels,
                     double w_cls, double w_seg, T* dlogit = nullptr, MatX<T>* dseg = nullptr) {
  LossValue out;
  const double p = sigmoid(static_cast<double>(logit));
  const double q = class_label ? p : 1.0 - p;
  out.cls = -std::log(std::max(q, kLossEpsilon));
  if (dlogit) *dlogit = q > kLossEpsilon ? static_cast<T>(w_cls * (p - class_label)) : T(0);

  const Eigen::Index n = seg_logits.cols();
  if (n > 0 && (w_seg != 0.0 || dseg)) {
    using Arr = Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic>;
    const Eigen::Array<T, 1, Eigen::Dynamic> mx = seg_logits.array().colwise().maxCoeff();
    // Shift per column, then one contiguous exp so no column has a scalar tail.
    Arr e(seg_logits.rows(), n);
    for (Eigen::Index j = 0; j < n; ++j) e.col(j) = seg_logits.col(j).array() - mx(j);
    e = e.exp();
    const Eigen::Array<T, 1, Eigen::Dynamic> z = e.colwise().sum();
    double total = 0.0;
    const double scale = w_seg / static_cast<double>(n);
    if (dseg) {
      dseg->resize(seg_logits.rows(), n);
      for (Eigen::Index j = 0; j < n; ++j) dseg->col(j) = e.col(j).matrix() * static_cast<T>(scale / double(z(j)));
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto y = static_cast<Eigen::Index>(labels[static_cast<std::size_t>(j)]);
      const double py = static_cast<double>(e(y, j)) / static_cast<double>(z(j));
      total += -std::log(std::max(py, kLossEpsilon));
      if (dseg) {
        if (py > kLossEpsilon) {
          (*dseg)(y, j) -= static_cast<T>(scale);
        } else {
          dseg->col(j).setZero();
        }
      }
    }
    out.seg = total / static_cast<double>(n);
  }
  out.total = w_cls * out.cls + w_seg * out.seg;
  return out;
}

struct TrainConfig {
  int batch_size = 16;
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  int epochs = 20;
  double w_cls = 0.15;
  double w_seg = 0.85;
  std::uint64_t seed = 0;
  int threads = 1;

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorCode::kConfig, "train config: " + m); };
    if (batch_size < 1) fail("batch_size must be positive");
    if (learning_rate < 0) fail("learning_rate must be non-negative");
    if (epochs < 0) fail("epochs must be non-negative");
    if (w_cls < 0 || w_seg < 0 || std::abs(w_cls + w_seg - 1.0) > 1e-9) fail("loss weights must be >= 0 and sum to 1");
    if (threads < 1) fail("threads must be positive");
  }
};

struct TrainLog {
  std::vector<LossValue> epoch_loss;  // mean over examples, at pre-update weights
};

template <typename T>
class AdamOptimizer {
 public:
  AdamOptimizer(const NetworkConfig& cfg, const TrainConfig& tc)
      : tc_(tc), m_(NetParams<T>::zeros(cfg)), v_(NetParams<T>::zeros(cfg)) {}

  void step(NetParams<T>& params, const NetParams<T>& grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(tc_.beta1, t_);
    const double c2 = 1.0 - std::pow(tc_.beta2, t_);
    const T lr = static_cast<T>(tc_.learning_rate);
    const T b1 = static_cast<T>(tc_.beta1), b2 = static_cast<T>(tc_.beta2);
    const T eps = static_cast<T>(tc_.adam_epsilon);
    const T ic1 = static_cast<T>(1.0 / c1), ic2 = static_cast<T>(1.0 / c2);
    auto p = params.tensors();
    auto g = grad.tensors();
    auto m = m_.tensors();
    auto v = v_.tensors();
    for (std::size_t t = 0; t < p.size(); ++t) {
      for (std::size_t i = 0; i < p[t].size(); ++i) {
        m[t][i] = b1 * m[t][i] + (T(1) - b1) * g[t][i];
        v[t][i] = b2 * v[t][i] + (T(1) - b2) * g[t][i] * g[t][i];
        p[t][i] -= lr * (m[t][i] * ic1) / (std::sqrt(v[t][i] * ic2) + eps);
      }
    }
  }

  long steps() const { return t_; }

 private:
  TrainConfig tc_;
  NetParams<T> m_, v_;
  long t_ = 0;
};

/// Loss and accumulated gradient over `ids` of `data`, processed in order.
template <typename T>
LossValue accumulate_gradient(const PointNet<T>& net, const std::vector<LabeledExample>& data,
                              std::span<const std::size_t> ids, const TrainConfig& tc, NetParams<T>& grad) {
  LossValue sum;
  ForwardCache<T> cache;
  MatX<T> dseg;
  for (auto i : ids) {
    const auto& ex = data[i];
    net.forward(net.make_input(ex), cache, tc.w_seg != 0.0);
    T dlogit = 0;
    const MatX<T> empty;
    const auto lv = joint_loss<T>(cache.logit, ex.class_label, cache.has_seg ? cache.seg.back() : empty, ex.seg_labels,
                                  tc.w_cls, tc.w_seg, &dlogit, cache.has_seg ? &dseg : nullptr);
    net.backward(cache, dlogit, cache.has_seg ? dseg : empty, grad);
    sum.total += lv.total;
    sum.cls += lv.cls;
    sum.seg += lv.seg;
  }
  return sum;
}

/// Mean loss over a dataset without updating weights.
template <typename T>
LossValue evaluate_loss(const PointNet<T>& net, const std::vector<LabeledExample>& data, const TrainConfig& tc) {
  LossValue sum;
  ForwardCache<T> cache;
  for (const auto& ex : data) {
    net.forward(net.make_input(ex), cache, tc.w_seg != 0.0);
    const MatX<T> empty;
    const auto lv = joint_loss<T>(cache.logit, ex.class_label, cache.has_seg ? cache.seg.back() : empty,
                                  ex.seg_labels, tc.w_cls, tc.w_seg);
    sum.total += lv.total;
    sum.cls += lv.cls;
    sum.seg += lv.seg;
  }
  const double n = static_cast<double>(std::max<std::size_t>(data.size(), 1));
  return {sum.total / n, sum.cls / n, sum.seg / n};
}

/// Adam over shuffled mini-batches. Batch gradients are the mean over the
/// batch. With threads > 1 each thread takes a contiguous slice of the batch
/// and slices are summed in order, so results depend on the thread count
/// but not on scheduling.
template <typename T>
TrainLog train(PointNet<T>& net, const std::vector<LabeledExample>& data, const TrainConfig& tc,
               const std::function<void(int, const LossValue&)>& on_epoch = {}) {
  tc.validate();
  if (data.empty()) throw Error(ErrorCode::kInvalidArgument, "train: empty dataset");
  AdamOptimizer<T> adam(net.config(), tc);
  TrainLog log;
  const int threads = std::min(tc.threads, tc.batch_size);
  std::vector<NetParams<T>> grads(static_cast<std::size_t>(threads), NetParams<T>::zeros(net.config()));
  std::vector<std::size_t> order(data.size());
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed(tc.seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    LossValue sum;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(tc.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(tc.batch_size));
      const std::span<const std::size_t> batch(order.data() + start, end - start);
      std::vector<LossValue> part(static_cast<std::size_t>(threads));
      for (auto& g : grads) g.set_zero();
      const std::size_t per = (batch.size() + threads - 1) / threads;
      auto work = [&](std::size_t t) {
        const std::size_t a = std::min(batch.size(), t * per), b = std::min(batch.size(), a + per);
        part[t] = accumulate_gradient(net, data, batch.subspan(a, b - a), tc, grads[t]);
      };
      if (threads == 1) {
        work(0);
      } else {
        std::vector<std::jthread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(work, static_cast<std::size_t>(t));
      }
      for (int t = 1; t < threads; ++t) grads[0] += grads[static_cast<std::size_t>(t)];
      const T inv = static_cast<T>(1.0 / static_cast<double>(batch.size()));
      for (auto& s : grads[0].tensors())
        for (auto& v : s) v *= inv;
      adam.step(net.params(), grads[0]);
      for (const auto& p : part) {
        sum.total += p.total;
        sum.cls += p.cls;
        sum.seg += p.seg;
      }
    }
    const double n = static_cast<double>(data.size());
    log.epoch_loss.push_back({sum.total / n, sum.cls / n, sum.seg / n});
    if (on_epoch) on_epoch(epoch, log.epoch_loss.back());
  }
  return log;
}

}  // namespace pointvote
