// Nearest-neighbor queries over 3D point sets (median-split kd-tree).
#pragma once

#include "meshmotion/common.hpp"

#include <vector>

namespace meshmotion {

class KdTree {
 public:
  explicit KdTree(Matrix points);  // N x 3, N >= 1

  // Index of the nearest stored point; squared distance in *dist2 if given.
  int nearest(const Vec3& query, double* dist2 = nullptr) const;

  const Matrix& points() const { return points_; }

 private:
  struct Node {
    int left = -1, right = -1;
    int point = -1;   // leaf payload start
    int count = 0;    // leaf payload size
    int axis = 0;
    double split = 0.0;
  };

  int build(int begin, int end, int depth);

  Matrix points_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

// For each row of `queries`, the index of the nearest row of `targets`.
std::vector<int> nearest_indices(const Matrix& queries, const Matrix& targets);

}  // namespace meshmotion
