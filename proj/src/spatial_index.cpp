#include "lvreg/spatial_index.hpp"

#include <cmath>
#include <cstdint>

#include "lvreg/error.hpp"

namespace lvreg {

PointGrid::PointGrid(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
  if (points_.empty()) throw ValidationError("empty target cloud");
  const BoundingBox box = bounding_box(points_);
  const Vec3 extent = box.max - box.min;
  const double n = static_cast<double>(points_.size());

  // Mean spacing over the non-flat axes of the bounding box.
  double measure = 1.0;
  int flat_free = 0;
  for (int a = 0; a < 3; ++a) {
    if (extent[a] > 0.0) {
      measure *= extent[a];
      ++flat_free;
    }
  }
  cell_ = flat_free > 0 ? std::pow(measure / n, 1.0 / flat_free) : 1.0;
  if (!(cell_ > 0.0) || !std::isfinite(cell_)) cell_ = 1.0;

  const double max_cells = std::max(64.0, 8.0 * n);
  for (;;) {
    double total = 1.0;
    for (int a = 0; a < 3; ++a) {
      dims_[static_cast<std::size_t>(a)] = static_cast<int>(std::floor(extent[a] / cell_)) + 1;
      total *= dims_[static_cast<std::size_t>(a)];
    }
    if (total <= max_cells) break;
    cell_ *= 1.5;
  }
  origin_ = box.min;

  const std::size_t cell_count =
      static_cast<std::size_t>(dims_[0]) * static_cast<std::size_t>(dims_[1]) * static_cast<std::size_t>(dims_[2]);
  std::vector<int> cell_of_point(points_.size());
  cell_start_.assign(cell_count + 1, 0);
  for (std::size_t i = 0; i < points_.size(); ++i) {
    const auto c = cell_of(points_[i]);
    const int id = (c[2] * dims_[1] + c[1]) * dims_[0] + c[0];
    cell_of_point[i] = id;
    ++cell_start_[static_cast<std::size_t>(id) + 1];
  }
  for (std::size_t c = 0; c < cell_count; ++c) cell_start_[c + 1] += cell_start_[c];
  cell_points_.resize(points_.size());
  std::vector<int> fill(cell_start_.begin(), cell_start_.end() - 1);
  for (std::size_t i = 0; i < points_.size(); ++i) {
    cell_points_[static_cast<std::size_t>(fill[static_cast<std::size_t>(cell_of_point[i])]++)] =
        static_cast<int>(i);
  }
}

std::array<int, 3> PointGrid::cell_of(const Vec3& p) const {
  std::array<int, 3> c{};
  for (int a = 0; a < 3; ++a) {
    double f = std::floor((p[a] - origin_[a]) / cell_);
    f = std::clamp(f, -1e9, 1e9);
    c[static_cast<std::size_t>(a)] = static_cast<int>(f);
  }
  return c;
}

void PointGrid::scan_cell(int cx, int cy, int cz, const Vec3& q, int& best, double& best_d2) const {
  const std::size_t id = static_cast<std::size_t>((cz * dims_[1] + cy) * dims_[0] + cx);
  for (int k = cell_start_[id]; k < cell_start_[id + 1]; ++k) {
    const int i = cell_points_[static_cast<std::size_t>(k)];
    const double d2 = (q - points_[static_cast<std::size_t>(i)]).squaredNorm();
    if (d2 < best_d2 || (d2 == best_d2 && i < best)) {
      best = i;
      best_d2 = d2;
    }
  }
}

std::pair<int, double> PointGrid::nearest(const Vec3& q) const {
  const auto c = cell_of(q);
  long r0 = 0;
  long r_max = 0;
  for (std::size_t a = 0; a < 3; ++a) {
    const long lo = -static_cast<long>(c[a]);
    const long hi = static_cast<long>(c[a]) - (dims_[a] - 1);
    r0 = std::max({r0, lo, hi});
    r_max = std::max({r_max, static_cast<long>(c[a]), static_cast<long>(dims_[a] - 1) - c[a]});
  }

  int best = -1;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (long r = r0; r <= r_max; ++r) {
    if (best >= 0 && r > 0) {
      // Everything unscanned lies at least (r - 1) cells away along some axis.
      const double bound = static_cast<double>(r - 1) * cell_;
      if (best_d2 < bound * bound * (1.0 - 1e-12)) break;
    }
    const long z0 = std::max(0L, c[2] - r), z1 = std::min<long>(dims_[2] - 1, c[2] + r);
    const long y0 = std::max(0L, c[1] - r), y1 = std::min<long>(dims_[1] - 1, c[1] + r);
    const long x0 = std::max(0L, c[0] - r), x1 = std::min<long>(dims_[0] - 1, c[0] + r);
    for (long z = z0; z <= z1; ++z) {
      const bool z_shell = std::labs(z - c[2]) == r;
      for (long y = y0; y <= y1; ++y) {
        const bool shell = z_shell || std::labs(y - c[1]) == r;
        if (shell) {
          for (long x = x0; x <= x1; ++x) {
            scan_cell(static_cast<int>(x), static_cast<int>(y), static_cast<int>(z), q, best, best_d2);
          }
        } else {
          for (const long x : {c[0] - r, c[0] + r}) {
            if (x < 0 || x > dims_[0] - 1 || (x == c[0] + r && r == 0)) continue;
            scan_cell(static_cast<int>(x), static_cast<int>(y), static_cast<int>(z), q, best, best_d2);
          }
        }
      }
    }
  }
  return {best, best_d2};
}

AabbTree::AabbTree(std::span<const Aabb> boxes) {
  order_.resize(boxes.size());
  for (std::size_t i = 0; i < boxes.size(); ++i) order_[i] = static_cast<int>(i);
  if (boxes.empty()) return;
  std::vector<Vec3> centers(boxes.size());
  for (std::size_t i = 0; i < boxes.size(); ++i) centers[i] = 0.5 * (boxes[i].lo + boxes[i].hi);
  nodes_.reserve(boxes.size());
  build(boxes, centers, 0, static_cast<int>(boxes.size()));
}

int AabbTree::build(std::span<const Aabb> boxes, std::vector<Vec3>& centers, int begin, int end) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.emplace_back();
  Aabb box;
  Aabb center_box;
  for (int k = begin; k < end; ++k) {
    const auto prim = static_cast<std::size_t>(order_[static_cast<std::size_t>(k)]);
    box.extend(boxes[prim]);
    center_box.extend(centers[prim]);
  }
  nodes_[static_cast<std::size_t>(id)].box = box;
  if (end - begin <= 4) {
    nodes_[static_cast<std::size_t>(id)].begin = begin;
    nodes_[static_cast<std::size_t>(id)].end = end;
    return id;
  }
  const Vec3 extent = center_box.hi - center_box.lo;
  int axis = 0;
  if (extent[1] > extent[axis]) axis = 1;
  if (extent[2] > extent[axis]) axis = 2;
  const int mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](int a, int b) {
                     const double ca = centers[static_cast<std::size_t>(a)][axis];
                     const double cb = centers[static_cast<std::size_t>(b)][axis];
                     return ca < cb || (ca == cb && a < b);
                   });
  const int left = build(boxes, centers, begin, mid);
  const int right = build(boxes, centers, mid, end);
  nodes_[static_cast<std::size_t>(id)].left = left;
  nodes_[static_cast<std::size_t>(id)].right = right;
  return id;
}

namespace {

Aabb triangle_box(const Vec3& a, const Vec3& b, const Vec3& c) {
  Aabb box;
  box.extend(a);
  box.extend(b);
  box.extend(c);
  return box;
}

std::vector<Aabb> face_boxes(std::span<const Vec3> vertices, std::span<const Face> faces,
                             std::span<const int> subset) {
  std::vector<Aabb> boxes;
  boxes.reserve(subset.size());
  for (int f : subset) {
    const Face& face = faces[static_cast<std::size_t>(f)];
    boxes.push_back(triangle_box(vertices[static_cast<std::size_t>(face[0])],
                                 vertices[static_cast<std::size_t>(face[1])],
                                 vertices[static_cast<std::size_t>(face[2])]));
  }
  return boxes;
}

std::vector<int> sorted_copy(std::span<const int> subset) {
  std::vector<int> out(subset.begin(), subset.end());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<Aabb> point_boxes(std::span<const Vec3> points) {
  std::vector<Aabb> boxes(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) boxes[i].extend(points[i]);
  return boxes;
}

}  // namespace

TriangleIndex::TriangleIndex(std::span<const Vec3> vertices, std::span<const Face> faces,
                             std::span<const int> face_subset)
    : vertices_(vertices),
      faces_(faces),
      subset_(sorted_copy(face_subset)),
      tree_(face_boxes(vertices, faces, subset_)) {}

TriangleQuery TriangleIndex::nearest(const Vec3& p) const {
  auto corner = [&](int f, int k) -> const Vec3& {
    return vertices_[static_cast<std::size_t>(faces_[static_cast<std::size_t>(f)][static_cast<std::size_t>(k)])];
  };
  const auto [slot, d2] = tree_.nearest(
      [&](const Aabb& box) { return box.squared_distance(p); },
      [&](int i) {
        const int f = subset_[static_cast<std::size_t>(i)];
        return closest_point_on_triangle_unchecked(p, corner(f, 0), corner(f, 1), corner(f, 2))
            .squared_distance;
      });
  TriangleQuery out;
  if (slot < 0) return out;
  out.face = subset_[static_cast<std::size_t>(slot)];
  out.closest = closest_point_on_triangle_unchecked(p, corner(out.face, 0), corner(out.face, 1),
                                                    corner(out.face, 2));
  return out;
}

PointTree::PointTree(std::span<const Vec3> points)
    : points_(points.begin(), points.end()), tree_(point_boxes(points)) {}

std::pair<int, ClosestPoint> PointTree::nearest_to_triangle(const Vec3& a, const Vec3& b,
                                                            const Vec3& c) const {
  const Aabb tri = triangle_box(a, b, c);
  const auto [idx, d2] = tree_.nearest(
      [&](const Aabb& box) { return box.squared_distance(tri); },
      [&](int i) {
        return closest_point_on_triangle_unchecked(points_[static_cast<std::size_t>(i)], a, b, c)
            .squared_distance;
      });
  if (idx < 0) return {idx, ClosestPoint{}};
  return {idx, closest_point_on_triangle_unchecked(points_[static_cast<std::size_t>(idx)], a, b, c)};
}

}  // namespace lvreg
