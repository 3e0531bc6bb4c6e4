#pragma once

#include "sv3d/common.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <vector>

namespace sv3d {

// Exact nearest-neighbor queries over a fixed 3D point set
// (median-split k-d tree). Queries are const and freely concurrent.
class KdTree3 {
 public:
  explicit KdTree3(const std::vector<Vec3>& points) : points_(points) {
    order_.resize(points.size());
    std::iota(order_.begin(), order_.end(), 0);
    if (!points.empty()) build(0, points.size(), 0);
  }

  // returns (index, squared distance)
  std::pair<int, double> nearest(const Vec3& q) const {
    int best_idx = -1;
    double best_d2 = std::numeric_limits<double>::infinity();
    search(q, 0, points_.size(), 0, best_idx, best_d2);
    return {best_idx, best_d2};
  }

 private:
  const std::vector<Vec3>& points_;
  std::vector<int> order_;

  void build(std::size_t lo, std::size_t hi, int axis) {
    if (hi - lo <= 1) return;
    std::size_t mid = (lo + hi) / 2;
    std::nth_element(order_.begin() + lo, order_.begin() + mid, order_.begin() + hi,
                     [&](int a, int b) { return points_[a][axis] < points_[b][axis]; });
    build(lo, mid, (axis + 1) % 3);
    build(mid + 1, hi, (axis + 1) % 3);
  }

  void search(const Vec3& q, std::size_t lo, std::size_t hi, int axis, int& best_idx,
              double& best_d2) const {
    if (lo >= hi) return;
    std::size_t mid = (lo + hi) / 2;
    int idx = order_[mid];
    double d2 = (points_[idx] - q).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best_idx = idx;
    }
    double delta = q[axis] - points_[idx][axis];
    int next = (axis + 1) % 3;
    if (delta < 0.0) {
      search(q, lo, mid, next, best_idx, best_d2);
      if (delta * delta < best_d2) search(q, mid + 1, hi, next, best_idx, best_d2);
    } else {
      search(q, mid + 1, hi, next, best_idx, best_d2);
      if (delta * delta < best_d2) search(q, lo, mid, next, best_idx, best_d2);
    }
  }
};

}  // namespace sv3d
