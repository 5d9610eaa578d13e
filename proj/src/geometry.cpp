#include "lvreg/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <tuple>
#include <string>

#include <fmt/format.h>

#include "lvreg/error.hpp"
#include "lvreg/random.hpp"
#include "lvreg/spatial_index.hpp"

namespace lvreg {

namespace {

void validate_faces(std::span<const Vec3> vertices, std::span<const Face> faces) {
  const auto n = static_cast<long>(vertices.size());
  for (std::size_t f = 0; f < faces.size(); ++f) {
    const Face& face = faces[f];
    for (int idx : face) {
      if (idx < 0 || idx >= n) {
        throw ValidationError(fmt::format("face {} references vertex {} (vertex count {})", f, idx, n));
      }
    }
    if (face[0] == face[1] || face[1] == face[2] || face[0] == face[2]) {
      throw ValidationError(fmt::format("face {} repeats a vertex", f));
    }
    const double area = face_area(vertices[static_cast<std::size_t>(face[0])],
                                  vertices[static_cast<std::size_t>(face[1])],
                                  vertices[static_cast<std::size_t>(face[2])]);
    if (!(area > kMinFaceArea)) {
      throw ValidationError(fmt::format("degenerate face {} (area {:g})", f, area));
    }
  }
}

ClosestPoint on_segment(const Vec3& p, const Vec3& a, const Vec3& b, int ia, int ib) {
  const Vec3 ab = b - a;
  const double len2 = ab.squaredNorm();
  double t = len2 > 0.0 ? (p - a).dot(ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  ClosestPoint out;
  out.barycentric = Vec3::Zero();
  out.barycentric[ia] = 1.0 - t;
  out.barycentric[ib] = t;
  out.point = (1.0 - t) * a + t * b;
  out.squared_distance = (p - out.point).squaredNorm();
  return out;
}

ClosestPoint from_barycentric(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c,
                              double b0, double b1, double b2) {
  ClosestPoint out;
  out.barycentric = Vec3(b0, b1, b2);
  out.point = b0 * a + b1 * b + b2 * c;
  out.squared_distance = (p - out.point).squaredNorm();
  return out;
}

}  // namespace

TriangleMesh::TriangleMesh(std::vector<Vec3> vertices, std::vector<Face> faces)
    : vertices_(std::move(vertices)), faces_(std::move(faces)) {
  for (const Vec3& v : vertices_) {
    if (!v.allFinite()) throw ValidationError("mesh vertex has non-finite coordinates");
  }
  validate_faces(vertices_, faces_);
}

TriangleMesh TriangleMesh::with_vertices(std::vector<Vec3> vertices) const {
  if (vertices.size() != vertices_.size()) {
    throw ValidationError(fmt::format("vertex count mismatch: {} vs {}", vertices.size(),
                                      vertices_.size()));
  }
  return TriangleMesh(std::move(vertices), faces_);
}

PointCloud::PointCloud(std::vector<Vec3> points) : points_(std::move(points)) {
  if (points_.empty()) throw ValidationError("point cloud is empty");
  for (const Vec3& p : points_) {
    if (!p.allFinite()) throw ValidationError("point cloud has non-finite coordinates");
  }
}

PartLabelSet::PartLabelSet(std::vector<std::string> names) : names_(std::move(names)) {
  if (names_.empty()) throw ValidationError("part label set needs at least one name");
  std::set<std::string> seen;
  for (const auto& n : names_) {
    if (!seen.insert(n).second) throw ValidationError("duplicate part name: " + n);
  }
}

PartLabelSet PartLabelSet::defaults() {
  return PartLabelSet({"thalamus", "caudate", "hippocampus", "amygdala", "contralateral-LV"});
}

PartLabelSet PartLabelSet::with_count(int m) {
  if (m < 1) throw ValidationError("part count must be >= 1");
  if (m == 5) return defaults();
  std::vector<std::string> names;
  for (int i = 0; i < m; ++i) names.push_back(fmt::format("part-{}", i));
  return PartLabelSet(std::move(names));
}

int PartLabelSet::index_of(const std::string& name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw ValidationError("unknown part name: " + name);
  return static_cast<int>(it - names_.begin());
}

LabeledPointCloud::LabeledPointCloud(PointCloud cloud_in, std::vector<int> labels_in, int m)
    : cloud(std::move(cloud_in)), labels(std::move(labels_in)), part_count(m) {
  if (labels.size() != cloud.size()) {
    throw ValidationError(fmt::format("label count {} != point count {}", labels.size(), cloud.size()));
  }
  for (int l : labels) {
    if (l < 0 || l >= m) throw ValidationError(fmt::format("label {} out of range [0, {})", l, m));
  }
}

int face_label_from_vertices(int l0, int l1, int l2) {
  if (l1 == l2) return l1;
  return l0;  // l0 matches one of the others, or all three differ
}

LabeledMesh::LabeledMesh(TriangleMesh mesh_in, std::vector<int> vertex_labels_in, int m)
    : mesh(std::move(mesh_in)), vertex_labels(std::move(vertex_labels_in)), part_count(m) {
  if (vertex_labels.size() != mesh.vertex_count()) {
    throw ValidationError(fmt::format("label count {} != vertex count {}", vertex_labels.size(),
                                      mesh.vertex_count()));
  }
  for (int l : vertex_labels) {
    if (l < 0 || l >= m) throw ValidationError(fmt::format("label {} out of range [0, {})", l, m));
  }
  face_labels.reserve(mesh.face_count());
  for (const Face& f : mesh.faces()) {
    face_labels.push_back(face_label_from_vertices(vertex_labels[static_cast<std::size_t>(f[0])],
                                                   vertex_labels[static_cast<std::size_t>(f[1])],
                                                   vertex_labels[static_cast<std::size_t>(f[2])]));
  }
}

double face_area(const Vec3& a, const Vec3& b, const Vec3& c) {
  return 0.5 * (b - a).cross(c - a).norm();
}

ClosestPoint closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  if (!(face_area(a, b, c) > kMinFaceArea)) throw ValidationError("degenerate face");
  return closest_point_on_triangle_unchecked(p, a, b, c);
}

// Voronoi-region walk over vertices, edges and interior of the triangle.
ClosestPoint closest_point_on_triangle_unchecked(const Vec3& p, const Vec3& a, const Vec3& b,
                                                 const Vec3& c) {
  const Vec3 ab = b - a;
  const Vec3 ac = c - a;
  if (ab.cross(ac).squaredNorm() <= 4.0 * kMinFaceArea * kMinFaceArea) {
    ClosestPoint best = on_segment(p, a, b, 0, 1);
    for (const ClosestPoint& cand : {on_segment(p, b, c, 1, 2), on_segment(p, a, c, 0, 2)}) {
      if (cand.squared_distance < best.squared_distance) best = cand;
    }
    return best;
  }

  const Vec3 ap = p - a;
  const double d1 = ab.dot(ap);
  const double d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return from_barycentric(p, a, b, c, 1.0, 0.0, 0.0);

  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp);
  const double d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return from_barycentric(p, a, b, c, 0.0, 1.0, 0.0);

  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
    const double v = d1 / (d1 - d3);
    return from_barycentric(p, a, b, c, 1.0 - v, v, 0.0);
  }

  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp);
  const double d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return from_barycentric(p, a, b, c, 0.0, 0.0, 1.0);

  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
    const double w = d2 / (d2 - d6);
    return from_barycentric(p, a, b, c, 1.0 - w, 0.0, w);
  }

  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return from_barycentric(p, a, b, c, 0.0, 1.0 - w, w);
  }

  const double denom = 1.0 / (va + vb + vc);
  const double v = vb * denom;
  const double w = vc * denom;
  return from_barycentric(p, a, b, c, 1.0 - v - w, v, w);
}

NearestNeighbors nearest_neighbor(std::span<const Vec3> queries, std::span<const Vec3> targets) {
  if (targets.empty()) throw ValidationError("empty target cloud");
  const PointGrid grid(targets);
  NearestNeighbors out;
  out.indices.resize(queries.size());
  out.squared_distances.resize(queries.size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    const auto [idx, d2] = grid.nearest(queries[q]);
    out.indices[q] = idx;
    out.squared_distances[q] = d2;
  }
  return out;
}

NearestNeighbors nearest_neighbor(const PointCloud& queries, const PointCloud& targets) {
  return nearest_neighbor(std::span<const Vec3>(queries.points()),
                          std::span<const Vec3>(targets.points()));
}

void sample_surface_locations(std::span<const Vec3> vertices, std::span<const Face> faces,
                              std::size_t n, std::uint64_t seed, std::vector<int>& face_indices,
                              std::vector<Vec3>& barycentrics) {
  if (n < 1) throw ValidationError("sample count must be >= 1");
  if (faces.empty()) throw ValidationError("cannot sample a mesh without faces");
  std::vector<double> cumulative(faces.size());
  double total = 0.0;
  for (std::size_t f = 0; f < faces.size(); ++f) {
    const Face& face = faces[f];
    total += face_area(vertices[static_cast<std::size_t>(face[0])],
                       vertices[static_cast<std::size_t>(face[1])],
                       vertices[static_cast<std::size_t>(face[2])]);
    cumulative[f] = total;
  }
  if (!(total > 0.0) || !std::isfinite(total)) throw Error("mesh has zero total area");

  Rng rng(seed);
  face_indices.resize(n);
  barycentrics.resize(n);
  for (std::size_t s = 0; s < n; ++s) {
    const double target = rng.uniform() * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), target);
    if (it == cumulative.end()) --it;
    face_indices[s] = static_cast<int>(it - cumulative.begin());
    const double u = std::sqrt(rng.uniform());
    const double r2 = rng.uniform();
    barycentrics[s] = Vec3(1.0 - u, u * (1.0 - r2), u * r2);
  }
}

SurfaceSamples sample_surface(const TriangleMesh& mesh, std::size_t n, std::uint64_t seed) {
  SurfaceSamples out;
  sample_surface_locations(mesh.vertices(), mesh.faces(), n, seed, out.face_indices,
                           out.barycentrics);
  std::vector<Vec3> pts(n);
  const auto& verts = mesh.vertices();
  for (std::size_t s = 0; s < n; ++s) {
    const Face& f = mesh.faces()[static_cast<std::size_t>(out.face_indices[s])];
    const Vec3& b = out.barycentrics[s];
    pts[s] = b[0] * verts[static_cast<std::size_t>(f[0])] + b[1] * verts[static_cast<std::size_t>(f[1])] +
             b[2] * verts[static_cast<std::size_t>(f[2])];
  }
  out.points = PointCloud(std::move(pts));
  return out;
}

std::vector<Vec3> face_normals(const TriangleMesh& mesh) {
  std::vector<Vec3> normals;
  normals.reserve(mesh.face_count());
  const auto& v = mesh.vertices();
  for (const Face& f : mesh.faces()) {
    const Vec3& a = v[static_cast<std::size_t>(f[0])];
    const Vec3 n = (v[static_cast<std::size_t>(f[1])] - a).cross(v[static_cast<std::size_t>(f[2])] - a);
    const double len = n.norm();
    if (!(0.5 * len > kMinFaceArea)) throw ValidationError("degenerate face");
    normals.push_back(n / len);
  }
  return normals;
}

MeshTopology mesh_topology(std::size_t vertex_count, std::span<const Face> faces) {
  struct Incidence {
    int lo, hi, face;
  };
  std::vector<Incidence> inc;
  inc.reserve(faces.size() * 3);
  for (std::size_t f = 0; f < faces.size(); ++f) {
    for (int k = 0; k < 3; ++k) {
      const int a = faces[f][static_cast<std::size_t>(k)];
      const int b = faces[f][static_cast<std::size_t>((k + 1) % 3)];
      inc.push_back({std::min(a, b), std::max(a, b), static_cast<int>(f)});
    }
  }
  std::sort(inc.begin(), inc.end(), [](const Incidence& x, const Incidence& y) {
    return std::tie(x.lo, x.hi, x.face) < std::tie(y.lo, y.hi, y.face);
  });

  MeshTopology topo;
  topo.vertex_adjacency.resize(vertex_count);
  for (std::size_t i = 0; i < inc.size(); ++i) {
    if (i == 0 || inc[i].lo != inc[i - 1].lo || inc[i].hi != inc[i - 1].hi) {
      topo.edges.push_back({inc[i].lo, inc[i].hi});
      topo.edge_faces.emplace_back();
      topo.vertex_adjacency[static_cast<std::size_t>(inc[i].lo)].push_back(inc[i].hi);
      topo.vertex_adjacency[static_cast<std::size_t>(inc[i].hi)].push_back(inc[i].lo);
    }
    auto& adjacent = topo.edge_faces.back();
    if (adjacent.empty() || adjacent.back() != inc[i].face) adjacent.push_back(inc[i].face);
  }
  for (auto& nbrs : topo.vertex_adjacency) std::sort(nbrs.begin(), nbrs.end());
  return topo;
}

MeshTopology mesh_topology(const TriangleMesh& mesh) {
  return mesh_topology(mesh.vertex_count(), mesh.faces());
}

std::vector<Vec3> uniform_laplacian(const TriangleMesh& mesh) {
  const MeshTopology topo = mesh_topology(mesh);
  const auto& v = mesh.vertices();
  std::vector<Vec3> lap(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto& nbrs = topo.vertex_adjacency[i];
    if (nbrs.empty()) throw ValidationError(fmt::format("isolated vertex {}", i));
    Vec3 sum = Vec3::Zero();
    for (int j : nbrs) sum += v[static_cast<std::size_t>(j)];
    lap[i] = sum / static_cast<double>(nbrs.size()) - v[i];
  }
  return lap;
}

double enclosed_volume(const TriangleMesh& mesh) {
  double six_v = 0.0;
  const auto& v = mesh.vertices();
  for (const Face& f : mesh.faces()) {
    six_v += v[static_cast<std::size_t>(f[0])].dot(
        v[static_cast<std::size_t>(f[1])].cross(v[static_cast<std::size_t>(f[2])]));
  }
  return six_v / 6.0;
}

long euler_characteristic(const TriangleMesh& mesh) {
  const MeshTopology topo = mesh_topology(mesh);
  return static_cast<long>(mesh.vertex_count()) - static_cast<long>(topo.edges.size()) +
         static_cast<long>(mesh.face_count());
}

bool is_closed_manifold(const TriangleMesh& mesh) {
  if (mesh.face_count() == 0) return false;
  const MeshTopology topo = mesh_topology(mesh);
  return std::all_of(topo.edge_faces.begin(), topo.edge_faces.end(),
                     [](const std::vector<int>& f) { return f.size() == 2; });
}

BoundingBox bounding_box(std::span<const Vec3> points) {
  if (points.empty()) throw ValidationError("bounding box of an empty set");
  BoundingBox box{points[0], points[0]};
  for (const Vec3& p : points) {
    box.min = box.min.cwiseMin(p);
    box.max = box.max.cwiseMax(p);
  }
  return box;
}

}  // namespace lvreg
