#include "lvreg/marching_cubes.hpp"

#include <algorithm>
#include <unordered_map>

#include "lvreg/error.hpp"

namespace lvreg::mc {

namespace {

int edge_between(int a, int b) {
  for (int e = 0; e < 12; ++e) {
    if ((kEdges[e][0] == a && kEdges[e][1] == b) || (kEdges[e][0] == b && kEdges[e][1] == a)) return e;
  }
  return -1;
}

// Bitmask of the two cube faces containing each edge.
std::array<int, 12> edge_face_masks() {
  std::array<int, 12> masks{};
  for (int f = 0; f < 6; ++f) {
    for (int i = 0; i < 4; ++i) {
      masks[edge_between(kFaces[f][i], kFaces[f][(i + 1) % 4])] |= 1 << f;
    }
  }
  return masks;
}

Vec3 edge_midpoint(int e) {
  const auto& a = kCorners[kEdges[e][0]];
  const auto& b = kCorners[kEdges[e][1]];
  return Vec3(a[0] + b[0], a[1] + b[1], a[2] + b[2]) * 0.5;
}

using Triangulation = std::vector<std::array<std::size_t, 3>>;

// All triangulations of the polygon with vertices first..last (indices into a loop).
std::vector<Triangulation> triangulations(std::size_t first, std::size_t last) {
  if (last - first < 2) return {Triangulation{}};
  std::vector<Triangulation> out;
  for (std::size_t k = first + 1; k < last; ++k) {
    for (const auto& left : triangulations(first, k)) {
      for (const auto& right : triangulations(k, last)) {
        Triangulation t = left;
        t.insert(t.end(), right.begin(), right.end());
        t.push_back({first, k, last});
        out.push_back(std::move(t));
      }
    }
  }
  return out;
}

// Farthest any point of triangle abc gets from the nearest inside corner.
double corner_distance(const Vec3& a, const Vec3& b, const Vec3& c, int cube) {
  constexpr int kSteps = 8;
  double worst = 0.0;
  for (int i = 0; i <= kSteps; ++i) {
    for (int j = 0; i + j <= kSteps; ++j) {
      const Vec3 p = a + (b - a) * (double(i) / kSteps) + (c - a) * (double(j) / kSteps);
      double best = 1e9;
      for (int k = 0; k < 8; ++k) {
        if (((cube >> k) & 1) == 0) continue;
        best = std::min(best, (p - Vec3(kCorners[k][0], kCorners[k][1], kCorners[k][2])).norm());
      }
      worst = std::max(worst, best);
    }
  }
  return worst;
}

// Triangulates one crossing loop. Diagonals never join two points of the same
// cube face (such a diagonal could clash with the neighbouring cube); among the
// remaining triangulations the surface is kept as close to the inside corners
// as possible, then the total diagonal length is minimized.
std::vector<EdgeTriangle> triangulate_loop(const std::vector<int>& loop, int cube,
                                           const std::array<int, 12>& face_mask) {
  const std::size_t n = loop.size();
  auto adjacent = [n](std::size_t i, std::size_t j) { return (i + 1) % n == j || (j + 1) % n == i; };
  const Triangulation* best = nullptr;
  double best_dist = 0.0, best_len = 0.0;
  const auto all = triangulations(0, n - 1);
  for (const auto& t : all) {
    bool ok = true;
    double dist = 0.0, len = 0.0;
    for (const auto& tri : t) {
      for (int k = 0; k < 3; ++k) {
        const std::size_t i = tri[k], j = tri[(k + 1) % 3];
        if (adjacent(i, j)) continue;
        if (face_mask[loop[i]] & face_mask[loop[j]]) ok = false;
        len += (edge_midpoint(loop[i]) - edge_midpoint(loop[j])).norm();
      }
      dist = std::max(dist, corner_distance(edge_midpoint(loop[tri[0]]), edge_midpoint(loop[tri[1]]),
                                            edge_midpoint(loop[tri[2]]), cube));
    }
    if (!ok) continue;
    if (best == nullptr || dist < best_dist - 1e-12 || (dist < best_dist + 1e-12 && len < best_len - 1e-12)) {
      best = &t;
      best_dist = dist;
      best_len = len;
    }
  }
  std::vector<EdgeTriangle> out;
  if (best == nullptr) return out;
  for (const auto& tri : *best) out.push_back({loop[tri[0]], loop[tri[1]], loop[tri[2]]});
  return out;
}

std::array<std::vector<EdgeTriangle>, 256> build_table() {
  const auto face_mask = edge_face_masks();
  std::array<std::vector<EdgeTriangle>, 256> table;
  for (int cube = 0; cube < 256; ++cube) {
    auto inside = [cube](int c) { return ((cube >> c) & 1) != 0; };
    // Walking a face counter-clockwise, an entry crossing (outside -> inside)
    // links to the next crossing, which is always an exit.
    std::array<int, 12> next;
    next.fill(-1);
    for (const auto& face : kFaces) {
      std::vector<std::pair<int, bool>> crossings;
      for (int i = 0; i < 4; ++i) {
        const int a = face[i];
        const int b = face[(i + 1) % 4];
        if (inside(a) != inside(b)) crossings.emplace_back(edge_between(a, b), inside(b));
      }
      for (std::size_t i = 0; i < crossings.size(); ++i) {
        if (crossings[i].second) next[crossings[i].first] = crossings[(i + 1) % crossings.size()].first;
      }
    }
    std::array<bool, 12> used{};
    for (int start = 0; start < 12; ++start) {
      if (next[start] < 0 || used[start]) continue;
      std::vector<int> loop;
      for (int e = start; !used[e]; e = next[e]) {
        used[e] = true;
        loop.push_back(e);
      }
      const auto tris = triangulate_loop(loop, cube, face_mask);
      table[cube].insert(table[cube].end(), tris.begin(), tris.end());
    }
  }
  return table;
}

}  // namespace

const std::array<std::vector<EdgeTriangle>, 256>& triangle_table() {
  static const auto table = build_table();
  return table;
}

TriangleMesh extract_binary(std::span<const std::uint8_t> inside, const std::array<int, 3>& dims,
                            const Vec3& spacing, const Vec3& origin) {
  const long nx = dims[0], ny = dims[1], nz = dims[2];
  if (static_cast<long>(inside.size()) != nx * ny * nz) throw Error("grid size does not match dims");
  const auto& table = triangle_table();
  auto at = [&](long i, long j, long k) { return inside[static_cast<std::size_t>((k * ny + j) * nx + i)] != 0; };

  // Vertex key: grid index of the edge's lower corner times 3 plus the axis.
  std::unordered_map<long, int> vertex_of;
  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  auto vertex = [&](long i, long j, long k, int edge) {
    const auto& ca = kCorners[kEdges[edge][0]];
    const auto& cb = kCorners[kEdges[edge][1]];
    const long ai = i + std::min(ca[0], cb[0]), aj = j + std::min(ca[1], cb[1]), ak = k + std::min(ca[2], cb[2]);
    const int axis = ca[0] != cb[0] ? 0 : (ca[1] != cb[1] ? 1 : 2);
    const long key = ((ak * ny + aj) * nx + ai) * 3 + axis;
    auto [it, fresh] = vertex_of.try_emplace(key, static_cast<int>(vertices.size()));
    if (fresh) {
      Vec3 g(static_cast<double>(ai), static_cast<double>(aj), static_cast<double>(ak));
      g[axis] += 0.5;  // binary field: the 0.5 crossing is the edge midpoint
      vertices.push_back(origin + g.cwiseProduct(spacing));
    }
    return it->second;
  };

  for (long k = 0; k + 1 < nz; ++k) {
    for (long j = 0; j + 1 < ny; ++j) {
      for (long i = 0; i + 1 < nx; ++i) {
        int cube = 0;
        for (int c = 0; c < 8; ++c) {
          if (at(i + kCorners[c][0], j + kCorners[c][1], k + kCorners[c][2])) cube |= 1 << c;
        }
        for (const auto& tri : table[static_cast<std::size_t>(cube)]) {
          faces.push_back({vertex(i, j, k, tri[0]), vertex(i, j, k, tri[1]), vertex(i, j, k, tri[2])});
        }
      }
    }
  }
  return TriangleMesh(std::move(vertices), std::move(faces));
}

}  // namespace lvreg::mc
