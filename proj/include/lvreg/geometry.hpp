#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace lvreg {

using Vec3 = Eigen::Vector3d;
using Face = std::array<int, 3>;

/// Faces with area at or below this (mm^2) are rejected as degenerate.
inline constexpr double kMinFaceArea = 1e-12;

/// Triangle surface. Construction validates index bounds, repeated indices and
/// face area; a default-constructed mesh is empty.
class TriangleMesh {
 public:
  TriangleMesh() = default;
  TriangleMesh(std::vector<Vec3> vertices, std::vector<Face> faces);

  const std::vector<Vec3>& vertices() const { return vertices_; }
  const std::vector<Face>& faces() const { return faces_; }
  std::size_t vertex_count() const { return vertices_.size(); }
  std::size_t face_count() const { return faces_.size(); }

  /// Same connectivity, new positions (revalidated).
  TriangleMesh with_vertices(std::vector<Vec3> vertices) const;

 private:
  std::vector<Vec3> vertices_;
  std::vector<Face> faces_;
};

/// Non-empty set of finite 3D points.
class PointCloud {
 public:
  PointCloud() = default;
  explicit PointCloud(std::vector<Vec3> points);

  const std::vector<Vec3>& points() const { return points_; }
  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  const Vec3& operator[](std::size_t i) const { return points_[i]; }

 private:
  std::vector<Vec3> points_;
};

/// Ordered names of the peripheral structures; part index = position.
class PartLabelSet {
 public:
  explicit PartLabelSet(std::vector<std::string> names);

  /// thalamus, caudate, hippocampus, amygdala, contralateral-LV
  static PartLabelSet defaults();
  /// The defaults when m == 5, otherwise part-0 .. part-(m-1).
  static PartLabelSet with_count(int m);

  const std::vector<std::string>& names() const { return names_; }
  int size() const { return static_cast<int>(names_.size()); }
  const std::string& name(int part) const { return names_.at(static_cast<std::size_t>(part)); }
  /// Part index for a name; throws ValidationError if unknown.
  int index_of(const std::string& name) const;

 private:
  std::vector<std::string> names_;
};

struct LabeledPointCloud {
  LabeledPointCloud() = default;
  LabeledPointCloud(PointCloud cloud, std::vector<int> labels, int part_count);

  PointCloud cloud;
  std::vector<int> labels;
  int part_count = 0;
};

/// Majority vote over the three vertex labels; a three-way tie takes slot 0.
int face_label_from_vertices(int l0, int l1, int l2);

struct LabeledMesh {
  LabeledMesh() = default;
  LabeledMesh(TriangleMesh mesh, std::vector<int> vertex_labels, int part_count);

  TriangleMesh mesh;
  std::vector<int> vertex_labels;
  std::vector<int> face_labels;
  int part_count = 0;
};

struct ClosestPoint {
  Vec3 point;
  Vec3 barycentric;
  double squared_distance = 0.0;
};

/// Exact closest point on the closed triangle abc. Throws on degenerate faces.
ClosestPoint closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

/// Same as closest_point_on_triangle without the degeneracy check. Degenerate
/// triangles fall back to the nearest of their edges. Used inside the
/// optimization loop where a face may transiently collapse.
ClosestPoint closest_point_on_triangle_unchecked(const Vec3& p, const Vec3& a, const Vec3& b,
                                                 const Vec3& c);

struct NearestNeighbors {
  std::vector<int> indices;
  std::vector<double> squared_distances;
};

/// For every query, the nearest target (lowest index on ties).
NearestNeighbors nearest_neighbor(std::span<const Vec3> queries, std::span<const Vec3> targets);
NearestNeighbors nearest_neighbor(const PointCloud& queries, const PointCloud& targets);

struct SurfaceSamples {
  PointCloud points;
  std::vector<int> face_indices;
  std::vector<Vec3> barycentrics;
};

/// Area-weighted random surface samples, bitwise reproducible per seed.
SurfaceSamples sample_surface(const TriangleMesh& mesh, std::size_t n, std::uint64_t seed);

/// Sample locations only (faces and barycentrics) for arbitrary vertex positions.
/// Shared by sample_surface and the differentiable chamfer path.
void sample_surface_locations(std::span<const Vec3> vertices, std::span<const Face> faces,
                              std::size_t n, std::uint64_t seed, std::vector<int>& face_indices,
                              std::vector<Vec3>& barycentrics);

double face_area(const Vec3& a, const Vec3& b, const Vec3& c);

/// Unit normals, right-hand rule over (v1 - v0, v2 - v0).
std::vector<Vec3> face_normals(const TriangleMesh& mesh);

struct MeshTopology {
  /// Unique undirected edges stored as (low, high), sorted lexicographically.
  std::vector<std::array<int, 2>> edges;
  /// Sorted neighbor lists.
  std::vector<std::vector<int>> vertex_adjacency;
  /// Faces adjacent to each edge (parallel to `edges`), ascending face index.
  std::vector<std::vector<int>> edge_faces;
};

MeshTopology mesh_topology(std::size_t vertex_count, std::span<const Face> faces);
MeshTopology mesh_topology(const TriangleMesh& mesh);

/// Neighbor mean minus the vertex. Throws "isolated vertex" for vertices
/// without neighbors.
std::vector<Vec3> uniform_laplacian(const TriangleMesh& mesh);

/// Signed volume by the divergence theorem (positive for outward winding).
double enclosed_volume(const TriangleMesh& mesh);
/// V - E + F.
long euler_characteristic(const TriangleMesh& mesh);
/// True when every edge has exactly two adjacent faces.
bool is_closed_manifold(const TriangleMesh& mesh);

struct BoundingBox {
  Vec3 min;
  Vec3 max;
  double diagonal() const { return (max - min).norm(); }
};
BoundingBox bounding_box(std::span<const Vec3> points);

}  // namespace lvreg
