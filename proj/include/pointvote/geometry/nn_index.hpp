#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "pointvote/common.hpp"
#include "pointvote/geometry/point_cloud.hpp"

namespace pointvote {

struct Neighbor {
  std::size_t id = 0;
  double distance = 0.0;
};

/// Static k-d tree over 3-D positions. Queries are exact: the result equals a
/// linear scan that compares squared distances and breaks ties by lowest id.
class NNIndex {
 public:
  NNIndex() = default;

  explicit NNIndex(std::vector<Vec3> points, std::size_t leaf_size = 10)
      : leaf_size_(std::max<std::size_t>(leaf_size, 1)) {
    const std::size_t n = points.size();
    ids_.resize(n);
    for (std::size_t i = 0; i < n; ++i) ids_[i] = i;
    source_ = std::move(points);
    if (n > 0) {
      nodes_.reserve(2 * n / leaf_size_ + 2);
      build(0, n);
    }
    packed_.resize(n);
    for (std::size_t i = 0; i < n; ++i) packed_[i] = source_[ids_[i]];
  }

  explicit NNIndex(const PointCloud& cloud, std::size_t leaf_size = 10)
      : NNIndex(cloud.positions(), leaf_size) {}

  std::size_t size() const { return source_.size(); }
  bool empty() const { return source_.empty(); }
  const Vec3& point(std::size_t id) const { return source_[id]; }
  const std::vector<Vec3>& points() const { return source_; }

  Neighbor nearest(const Vec3& query) const {
    if (empty()) throw Error(ErrorCode::kEmptyIndex, "nearest on empty index");
    Best best;
    search_nearest(0, query, best);
    return {best.id, std::sqrt(best.d2)};
  }

  /// Nearest neighbor with distance <= max_distance, if any.
  std::optional<Neighbor> nearest_within(const Vec3& query, double max_distance) const {
    if (empty()) return std::nullopt;
    Best best;
    best.d2 = max_distance * max_distance;
    best.id = std::numeric_limits<std::size_t>::max();
    search_nearest(0, query, best);
    if (best.id == std::numeric_limits<std::size_t>::max()) return std::nullopt;
    return Neighbor{best.id, std::sqrt(best.d2)};
  }

  /// Ids of all points with distance <= radius, ascending.
  std::vector<std::size_t> radius_search(const Vec3& query, double radius) const {
    std::vector<std::size_t> out;
    if (!empty()) search_radius(0, query, radius * radius, out);
    std::sort(out.begin(), out.end());
    return out;
  }

  std::size_t radius_count(const Vec3& query, double radius) const {
    std::vector<std::size_t> out;
    if (!empty()) search_radius(0, query, radius * radius, out);
    return out.size();
  }

 private:
  struct Node {
    Vec3 lo, hi;
    std::size_t begin, end;
    std::int32_t left = -1, right = -1;
  };

  struct Best {
    double d2 = std::numeric_limits<double>::infinity();
    std::size_t id = std::numeric_limits<std::size_t>::max();
  };

  static double box_d2(const Node& node, const Vec3& q) {
    double d2 = 0.0;
    for (int k = 0; k < 3; ++k) {
      double d = 0.0;
      if (q[k] < node.lo[k]) d = node.lo[k] - q[k];
      else if (q[k] > node.hi[k]) d = q[k] - node.hi[k];
      d2 += d * d;
    }
    return d2;
  }

  std::int32_t build(std::size_t begin, std::size_t end) {
    Node node;
    node.begin = begin;
    node.end = end;
    node.lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    node.hi = -node.lo;
    for (std::size_t i = begin; i < end; ++i) {
      node.lo = node.lo.cwiseMin(source_[ids_[i]]);
      node.hi = node.hi.cwiseMax(source_[ids_[i]]);
    }
    const auto self = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back(node);
    if (end - begin <= leaf_size_) return self;
    int dim = 0;
    (node.hi - node.lo).maxCoeff(&dim);
    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(ids_.begin() + begin, ids_.begin() + mid, ids_.begin() + end,
                     [&](std::size_t a, std::size_t b) {
                       double va = source_[a][dim], vb = source_[b][dim];
                       return va < vb || (va == vb && a < b);
                     });
    std::int32_t l = build(begin, mid);
    std::int32_t r = build(mid, end);
    nodes_[self].left = l;
    nodes_[self].right = r;
    return self;
  }

  void search_nearest(std::int32_t ni, const Vec3& q, Best& best) const {
    const Node& node = nodes_[ni];
    if (node.left < 0) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        const double d2 = (packed_[i] - q).squaredNorm();
        const std::size_t id = ids_[i];
        if (d2 < best.d2 || (d2 == best.d2 && id < best.id)) {
          best.d2 = d2;
          best.id = id;
        }
      }
      return;
    }
    const double dl = box_d2(nodes_[node.left], q);
    const double dr = box_d2(nodes_[node.right], q);
    // Strict '>' pruning keeps equal-distance candidates reachable for the tie rule.
    if (dl <= dr) {
      if (dl <= best.d2) search_nearest(node.left, q, best);
      if (dr <= best.d2) search_nearest(node.right, q, best);
    } else {
      if (dr <= best.d2) search_nearest(node.right, q, best);
      if (dl <= best.d2) search_nearest(node.left, q, best);
    }
  }

  void search_radius(std::int32_t ni, const Vec3& q, double r2, std::vector<std::size_t>& out) const {
    const Node& node = nodes_[ni];
    if (box_d2(node, q) > r2) return;
    if (node.left < 0) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        if ((packed_[i] - q).squaredNorm() <= r2) out.push_back(ids_[i]);
      }
      return;
    }
    search_radius(node.left, q, r2, out);
    search_radius(node.right, q, r2, out);
  }

  std::size_t leaf_size_ = 10;
  std::vector<Vec3> source_;
  std::vector<Vec3> packed_;
  std::vector<std::size_t> ids_;
  std::vector<Node> nodes_;
};

}  // namespace pointvote
