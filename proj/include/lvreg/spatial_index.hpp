#pragma once

#include <algorithm>
#include <array>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "lvreg/geometry.hpp"

namespace lvreg {

/// Uniform hash grid over a fixed point set for exact nearest-neighbor queries.
/// The cell size is the mean point spacing of the target bounding box.
class PointGrid {
 public:
  explicit PointGrid(std::span<const Vec3> points);

  /// (index, squared distance) of the nearest point; lowest index wins ties.
  std::pair<int, double> nearest(const Vec3& query) const;

  std::size_t size() const { return points_.size(); }
  double cell_size() const { return cell_; }

 private:
  std::array<int, 3> cell_of(const Vec3& p) const;
  void scan_cell(int cx, int cy, int cz, const Vec3& q, int& best, double& best_d2) const;

  std::vector<Vec3> points_;
  Vec3 origin_ = Vec3::Zero();
  double cell_ = 1.0;
  std::array<int, 3> dims_{1, 1, 1};
  std::vector<int> cell_start_;
  std::vector<int> cell_points_;
};

struct Aabb {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = Vec3::Constant(-std::numeric_limits<double>::infinity());

  void extend(const Vec3& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  void extend(const Aabb& b) {
    lo = lo.cwiseMin(b.lo);
    hi = hi.cwiseMax(b.hi);
  }
  double squared_distance(const Vec3& p) const {
    const Vec3 d = (lo - p).cwiseMax(p - hi).cwiseMax(0.0);
    return d.squaredNorm();
  }
  double squared_distance(const Aabb& b) const {
    const Vec3 d = (lo - b.hi).cwiseMax(b.lo - hi).cwiseMax(0.0);
    return d.squaredNorm();
  }
};

/// Bounding-volume hierarchy over arbitrary primitives given by their boxes.
/// Queries are branch-and-bound with caller-supplied lower-bound and exact
/// distance functions, so the same tree serves point and triangle sets.
class AabbTree {
 public:
  explicit AabbTree(std::span<const Aabb> boxes);

  /// Minimizes exact(i) over all primitives. `lower_bound(box)` must never
  /// exceed exact(i) for any primitive inside `box`. Ties go to the lowest index.
  template <class LowerBound, class Exact>
  std::pair<int, double> nearest(LowerBound&& lower_bound, Exact&& exact) const;

  std::size_t size() const { return order_.size(); }

 private:
  struct Node {
    Aabb box;
    int left = -1;   // child index, or -1 for leaves
    int right = -1;
    int begin = 0;   // primitive range in order_ (leaves)
    int end = 0;
  };
  int build(std::span<const Aabb> boxes, std::vector<Vec3>& centers, int begin, int end);

  std::vector<Node> nodes_;
  std::vector<int> order_;
};

template <class LowerBound, class Exact>
std::pair<int, double> AabbTree::nearest(LowerBound&& lower_bound, Exact&& exact) const {
  int best = -1;
  double best_d2 = std::numeric_limits<double>::infinity();
  if (nodes_.empty()) return {best, best_d2};
  auto prunable = [&](double bound) { return bound > best_d2 * (1.0 + 1e-12) + 1e-300; };

  std::vector<std::pair<double, int>> stack;
  stack.reserve(64);
  stack.emplace_back(lower_bound(nodes_[0].box), 0);
  while (!stack.empty()) {
    const auto [bound, id] = stack.back();
    stack.pop_back();
    if (prunable(bound)) continue;
    const Node& node = nodes_[static_cast<std::size_t>(id)];
    if (node.left < 0) {
      for (int k = node.begin; k < node.end; ++k) {
        const int prim = order_[static_cast<std::size_t>(k)];
        const double d2 = exact(prim);
        if (d2 < best_d2 || (d2 == best_d2 && prim < best)) {
          best = prim;
          best_d2 = d2;
        }
      }
      continue;
    }
    const double bl = lower_bound(nodes_[static_cast<std::size_t>(node.left)].box);
    const double br = lower_bound(nodes_[static_cast<std::size_t>(node.right)].box);
    // Push the farther child first so the nearer one is expanded next.
    if (bl <= br) {
      stack.emplace_back(br, node.right);
      stack.emplace_back(bl, node.left);
    } else {
      stack.emplace_back(bl, node.left);
      stack.emplace_back(br, node.right);
    }
  }
  return {best, best_d2};
}

/// Nearest triangle to each query point over a face subset.
struct TriangleQuery {
  int face = -1;  // index into the full face list
  ClosestPoint closest;
};

/// BVH over a (possibly partial) set of faces of a vertex array.
class TriangleIndex {
 public:
  TriangleIndex(std::span<const Vec3> vertices, std::span<const Face> faces,
                std::span<const int> face_subset);

  TriangleQuery nearest(const Vec3& p) const;
  std::size_t size() const { return subset_.size(); }

 private:
  std::span<const Vec3> vertices_;
  std::span<const Face> faces_;
  std::vector<int> subset_;
  AabbTree tree_;
};

/// BVH over points, queried with triangles (nearest point to a triangle).
class PointTree {
 public:
  explicit PointTree(std::span<const Vec3> points);

  /// Point minimizing the squared point-triangle distance; returns the point
  /// index and the closest location on the triangle.
  std::pair<int, ClosestPoint> nearest_to_triangle(const Vec3& a, const Vec3& b,
                                                   const Vec3& c) const;
  std::size_t size() const { return points_.size(); }

 private:
  std::vector<Vec3> points_;
  AabbTree tree_;
};

}  // namespace lvreg
