#include "meshmotion/spatial.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace meshmotion {

namespace {
constexpr int kLeafSize = 16;
}

KdTree::KdTree(Matrix points) : points_(std::move(points)) {
  if (points_.rows() == 0)
    throw ValidationError("kd-tree requires at least one point");
  order_.resize(points_.rows());
  std::iota(order_.begin(), order_.end(), 0);
  nodes_.reserve(2 * points_.rows() / kLeafSize + 8);
  root_ = build(0, static_cast<int>(order_.size()), 0);
}

int KdTree::build(int begin, int end, int depth) {
  Node node;
  if (end - begin <= kLeafSize) {
    node.point = begin;
    node.count = end - begin;
    nodes_.push_back(node);
    return static_cast<int>(nodes_.size()) - 1;
  }
  // Split on the widest axis at the median.
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (int i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_.row(order_[i]).transpose());
    hi = hi.cwiseMax(points_.row(order_[i]).transpose());
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  const int mid = (begin + end) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid,
                   order_.begin() + end, [&](int a, int b) {
                     if (points_(a, axis) != points_(b, axis))
                       return points_(a, axis) < points_(b, axis);
                     return a < b;  // deterministic ties
                   });
  node.axis = axis;
  node.split = points_(order_[mid], axis);
  const int self = static_cast<int>(nodes_.size());
  nodes_.push_back(node);
  const int left = build(begin, mid, depth + 1);
  const int right = build(mid, end, depth + 1);
  nodes_[self].left = left;
  nodes_[self].right = right;
  return self;
}

int KdTree::nearest(const Vec3& query, double* dist2_out) const {
  int best = -1;
  double best_d2 = std::numeric_limits<double>::infinity();
  // Explicit stack: (node, squared distance to its slab).
  struct Item {
    int node;
    double d2;
  };
  std::vector<Item> stack;
  stack.push_back({root_, 0.0});
  while (!stack.empty()) {
    const Item it = stack.back();
    stack.pop_back();
    if (it.d2 >= best_d2) continue;
    const Node& n = nodes_[it.node];
    if (n.count > 0 || n.left < 0) {
      for (int i = 0; i < n.count; ++i) {
        const int p = order_[n.point + i];
        const double d2 = (points_.row(p).transpose() - query).squaredNorm();
        if (d2 < best_d2 || (d2 == best_d2 && p < best)) {
          best_d2 = d2;
          best = p;
        }
      }
      continue;
    }
    const double delta = query[n.axis] - n.split;
    const int near = delta < 0 ? n.left : n.right;
    const int far = delta < 0 ? n.right : n.left;
    stack.push_back({far, delta * delta});
    stack.push_back({near, it.d2});
  }
  if (dist2_out) *dist2_out = best_d2;
  return best;
}

std::vector<int> nearest_indices(const Matrix& queries, const Matrix& targets) {
  KdTree tree(targets);
  std::vector<int> out(queries.rows());
  for (int i = 0; i < queries.rows(); ++i)
    out[i] = tree.nearest(queries.row(i).transpose());
  return out;
}

}  // namespace meshmotion
