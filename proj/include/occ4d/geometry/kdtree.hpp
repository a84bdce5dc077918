#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "occ4d/common.hpp"

namespace occ4d::geo {

/// Exact 3D nearest-neighbor index. Distance ties resolve to the smallest
/// point index, so queries agree with an ascending brute-force scan not just
/// in distance but in the returned index.
class KdTree3 {
 public:
  explicit KdTree3(const std::vector<Vec3>& points) : points_(points) {
    if (points_.empty()) throw std::invalid_argument("KdTree3: empty point set");
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), 0);
    nodes_.reserve(points_.size() / kLeafSize * 2 + 2);
    root_ = build(0, points_.size());
  }

  struct Result {
    int index = -1;
    double squared_dist = std::numeric_limits<double>::infinity();
  };

  Result nearest(const Vec3& q) const {
    Result best;
    search(root_, q, best);
    return best;
  }

  std::size_t size() const { return points_.size(); }

 private:
  static constexpr std::size_t kLeafSize = 12;

  struct Node {
    int axis = -1;           // -1 marks a leaf
    double split = 0.0;
    int left = -1, right = -1;
    std::uint32_t begin = 0, end = 0;  // leaf range into order_
  };

  int build(std::size_t begin, std::size_t end) {
    Node node;
    if (end - begin <= kLeafSize) {
      node.begin = static_cast<std::uint32_t>(begin);
      node.end = static_cast<std::uint32_t>(end);
      nodes_.push_back(node);
      return static_cast<int>(nodes_.size() - 1);
    }
    // Split the widest axis of the subset's bounding box at the median.
    Vec3 lo = points_[order_[begin]];
    Vec3 hi = lo;
    for (std::size_t i = begin + 1; i < end; ++i) {
      const Vec3& p = points_[order_[i]];
      for (int a = 0; a < 3; ++a) {
        lo[a] = std::min(lo[a], p[a]);
        hi[a] = std::max(hi[a], p[a]);
      }
    }
    int axis = 0;
    for (int a = 1; a < 3; ++a)
      if (hi[a] - lo[a] > hi[axis] - lo[axis]) axis = a;

    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](int a, int b) {
                       if (points_[a][axis] != points_[b][axis])
                         return points_[a][axis] < points_[b][axis];
                       return a < b;
                     });
    node.axis = axis;
    node.split = points_[order_[mid]][axis];
    nodes_.push_back(node);
    const int self = static_cast<int>(nodes_.size() - 1);
    const int left = build(begin, mid);
    const int right = build(mid, end);
    nodes_[self].left = left;
    nodes_[self].right = right;
    return self;
  }

  void scan_leaf(const Node& node, const Vec3& q, Result& best) const {
    for (std::uint32_t i = node.begin; i < node.end; ++i) {
      const int idx = order_[i];
      const double d2 = squared_distance(q, points_[idx]);
      if (d2 < best.squared_dist || (d2 == best.squared_dist && idx < best.index)) {
        best.squared_dist = d2;
        best.index = idx;
      }
    }
  }

  void search(int node_id, const Vec3& q, Result& best) const {
    const Node& node = nodes_[node_id];
    if (node.axis < 0) {
      scan_leaf(node, q, best);
      return;
    }
    const double diff = q[node.axis] - node.split;
    const int near = diff < 0.0 ? node.left : node.right;
    const int far = diff < 0.0 ? node.right : node.left;
    search(near, q, best);
    // <= keeps equal-distance candidates reachable so index tie-breaking stays exact.
    if (diff * diff <= best.squared_dist) search(far, q, best);
  }

  const std::vector<Vec3>& points_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

/// Exact nearest reference index for every query point (ties -> smallest index).
inline std::vector<int> nearest_neighbor_indices(const std::vector<Vec3>& queries,
                                                 const std::vector<Vec3>& reference) {
  if (reference.empty()) throw std::invalid_argument("nearest_neighbor_indices: empty reference");
  KdTree3 tree(reference);
  std::vector<int> out(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) out[i] = tree.nearest(queries[i]).index;
  return out;
}

}  // namespace occ4d::geo
