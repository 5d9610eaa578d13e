#pragma once

// Helpers shared by the unit and acceptance tests: small fixture meshes,
// seeded random data and brute-force reference implementations that do not
// reuse library code paths.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "lvreg/geometry.hpp"
#include "lvreg/random.hpp"

namespace testing {

using lvreg::Face;
using lvreg::TriangleMesh;
using lvreg::Vec3;

/// True when `fn` throws an exception of type E whose message contains `needle`.
template <class E = std::exception>
bool throws_with(const std::function<void()>& fn, const std::string& needle) {
  try {
    fn();
  } catch (const E& e) {
    return std::string(e.what()).find(needle) != std::string::npos;
  } catch (...) {
    return false;
  }
  return false;
}

inline Vec3 random_vec(lvreg::Rng& rng, double lo = -1.0, double hi = 1.0) {
  return Vec3(rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi));
}

inline std::vector<Vec3> random_points(lvreg::Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<Vec3> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_vec(rng, lo, hi));
  return out;
}

/// Regular tetrahedron centered at the origin with circumradius sqrt(3),
/// outward winding.
inline TriangleMesh tetrahedron() {
  std::vector<Vec3> v = {{1, 1, 1}, {1, -1, -1}, {-1, 1, -1}, {-1, -1, 1}};
  std::vector<Face> f = {{0, 1, 2}, {0, 3, 1}, {0, 2, 3}, {1, 3, 2}};
  return TriangleMesh(v, f);
}

/// Unit square in z = 0 split along its diagonal.
inline TriangleMesh unit_square() {
  std::vector<Vec3> v = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}};
  std::vector<Face> f = {{0, 1, 2}, {0, 2, 3}};
  return TriangleMesh(v, f);
}

/// Planar n x n vertex grid with unit spacing in z = 0.
inline TriangleMesh planar_grid(int n) {
  std::vector<Vec3> v;
  std::vector<Face> f;
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) v.emplace_back(i, j, 0.0);
  for (int j = 0; j + 1 < n; ++j) {
    for (int i = 0; i + 1 < n; ++i) {
      const int a = j * n + i;
      f.push_back({a, a + 1, a + n + 1});
      f.push_back({a, a + n + 1, a + n});
    }
  }
  return TriangleMesh(v, f);
}

/// Regular dodecahedron with each pentagon fanned from one corner: 20 vertices,
/// 36 faces, closed, outward winding.
inline TriangleMesh triangulated_dodecahedron() {
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  const double ip = 1.0 / phi;
  std::vector<Vec3> v;
  for (int sx : {-1, 1})
    for (int sy : {-1, 1})
      for (int sz : {-1, 1}) v.emplace_back(sx, sy, sz);
  for (int a : {-1, 1})
    for (int b : {-1, 1}) {
      v.emplace_back(0, a * ip, b * phi);
      v.emplace_back(a * ip, b * phi, 0);
      v.emplace_back(a * phi, 0, b * ip);
    }
  // The 5 vertices furthest along each of the 12 face directions form a pentagon.
  std::vector<Vec3> dirs;
  for (int a : {-1, 1})
    for (int b : {-1, 1}) {
      dirs.emplace_back(0, a * phi, b);
      dirs.emplace_back(a * phi, b, 0);
      dirs.emplace_back(a, 0, b * phi);
    }
  std::vector<Face> faces;
  for (const Vec3& d0 : dirs) {
    const Vec3 d = d0.normalized();
    std::vector<std::pair<double, int>> score;
    for (int i = 0; i < static_cast<int>(v.size()); ++i) score.emplace_back(-v[static_cast<std::size_t>(i)].dot(d), i);
    std::sort(score.begin(), score.end());
    std::vector<int> ring;
    for (int k = 0; k < 5; ++k) ring.push_back(score[static_cast<std::size_t>(k)].second);
    // order the ring counter-clockwise around d
    Vec3 c = Vec3::Zero();
    for (int i : ring) c += v[static_cast<std::size_t>(i)];
    c /= 5.0;
    const Vec3 e1 = (v[static_cast<std::size_t>(ring[0])] - c).normalized();
    const Vec3 e2 = d.cross(e1);
    std::sort(ring.begin(), ring.end(), [&](int a, int b) {
      const Vec3 pa = v[static_cast<std::size_t>(a)] - c;
      const Vec3 pb = v[static_cast<std::size_t>(b)] - c;
      return std::atan2(pa.dot(e2), pa.dot(e1)) < std::atan2(pb.dot(e2), pb.dot(e1));
    });
    for (int k = 1; k + 1 < 5; ++k) {
      faces.push_back({ring[0], ring[static_cast<std::size_t>(k)], ring[static_cast<std::size_t>(k) + 1]});
    }
  }
  return TriangleMesh(v, faces);
}

/// Squared distance from p to segment ab.
inline double segment_sq(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double t = std::clamp((p - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
  return (p - (a + t * ab)).squaredNorm();
}

/// Reference point-triangle squared distance: plane projection when it lies
/// inside (sign test on edge normals), else the best of the three edges.
inline double triangle_sq(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 n = (b - a).cross(c - a);
  const Vec3 q = p - n * ((p - a).dot(n) / n.squaredNorm());
  const bool inside = n.dot((b - a).cross(q - a)) >= 0 && n.dot((c - b).cross(q - b)) >= 0 &&
                      n.dot((a - c).cross(q - c)) >= 0;
  if (inside) return (p - q).squaredNorm();
  return std::min({segment_sq(p, a, b), segment_sq(p, b, c), segment_sq(p, c, a)});
}

/// Exhaustive nearest neighbor: (index, squared distance), lowest index on ties.
inline std::pair<int, double> brute_nearest(const Vec3& q, const std::vector<Vec3>& targets) {
  int best = -1;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double d2 = (q - targets[i]).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best = static_cast<int>(i);
    }
  }
  return {best, best_d2};
}

/// Reference chamfer: mean squared NN distance in both directions.
inline double brute_chamfer(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  double sa = 0.0, sb = 0.0;
  for (const Vec3& p : a) sa += brute_nearest(p, b).second;
  for (const Vec3& p : b) sb += brute_nearest(p, a).second;
  return sa / static_cast<double>(a.size()) + sb / static_cast<double>(b.size());
}

/// Reference bidirectional point-mesh loss over a face subset.
inline double brute_point_mesh(const std::vector<Vec3>& points, const std::vector<Vec3>& verts,
                               const std::vector<Face>& faces, const std::vector<int>& subset) {
  auto corner = [&](int f, int k) {
    return verts[static_cast<std::size_t>(faces[static_cast<std::size_t>(f)][static_cast<std::size_t>(k)])];
  };
  double a = 0.0;
  for (const Vec3& p : points) {
    double best = std::numeric_limits<double>::infinity();
    for (int f : subset) best = std::min(best, triangle_sq(p, corner(f, 0), corner(f, 1), corner(f, 2)));
    a += best;
  }
  double b = 0.0;
  for (int f : subset) {
    double best = std::numeric_limits<double>::infinity();
    for (const Vec3& p : points) best = std::min(best, triangle_sq(p, corner(f, 0), corner(f, 1), corner(f, 2)));
    b += best;
  }
  return a / static_cast<double>(points.size()) + b / static_cast<double>(subset.size());
}

// U of the first group counted pair by pair, ties worth one half.
inline double pairwise_u(const std::vector<double>& a, const std::vector<double>& b) {
  double u = 0.0;
  for (double x : a)
    for (double y : b) u += x > y ? 1.0 : x == y ? 0.5 : 0.0;
  return u;
}

// Two-sided exact p by relabeling the pooled values under every bitmask.
inline double enumeration_p(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> pooled(a);
  pooled.insert(pooled.end(), b.begin(), b.end());
  const auto n = static_cast<unsigned>(pooled.size());
  const double mu = static_cast<double>(a.size() * b.size()) / 2.0;
  const double observed = std::abs(pairwise_u(a, b) - mu);
  int total = 0, extreme = 0;
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    if (std::popcount(mask) != static_cast<int>(a.size())) continue;
    std::vector<double> x, y;
    for (unsigned i = 0; i < n; ++i) ((mask >> i) & 1u ? x : y).push_back(pooled[i]);
    ++total;
    if (std::abs(pairwise_u(x, y) - mu) >= observed - 1e-9) ++extreme;
  }
  return static_cast<double>(extreme) / total;
}

inline double rel_diff(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("lvreg_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

}  // namespace testing
