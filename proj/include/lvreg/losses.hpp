#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lvreg/autodiff.hpp"
#include "lvreg/geometry.hpp"
#include "lvreg/spatial_index.hpp"

namespace lvreg {

/// Weights of the registration objective. The defaults are tuned for the
/// synthetic benchmarks, not taken from any published configuration.
struct LossWeights {
  double cf = 1.0;
  double pm = 1.0;
  std::vector<double> pm_i;  // one per part
  double vert = 0.1;
  double edge = 1.0;
  double normal = 0.01;
  double lap = 0.1;

  static LossWeights defaults(int part_count);
  /// Throws ValidationError on negative weights or a pm_i length != m.
  void validate(int part_count) const;
};

struct LossBreakdown {
  double cf = 0.0;
  double pm = 0.0;
  std::vector<double> pm_i;
  double vert = 0.0;
  double edge = 0.0;
  double normal = 0.0;
  double lap = 0.0;
  double total = 0.0;
  std::vector<std::string> warnings;

  /// sum of weight * term, in the same order the objective adds them
  double weighted_sum(const LossWeights& w) const;
};

/// `iter,cf,pm,pm_0..pm_{m-1},vert,edge,normal,lap,total`
std::string loss_csv_header(int part_count);
std::string loss_csv_row(int iteration, const LossBreakdown& b);

enum class EdgeMode { initial, zero };

/// Differentiable surface points: barycentric combinations of face corners with
/// fixed faces and weights.
ad::Tensor sample_points(const ad::Tensor& vertices, std::span<const Face> faces,
                         std::span<const int> face_indices, std::span<const Vec3> barycentrics);

/// Symmetric chamfer with squared distances and means in both directions.
/// Nearest-neighbor assignments are fixed at forward time.
ad::Tensor chamfer_loss(const ad::Tensor& samples, const PointCloud& baseline,
                        const PointGrid* baseline_index = nullptr);

/// Bidirectional squared point-to-triangle distance between points and a face
/// subset (all faces when `face_subset` is empty optional): mean over points of
/// the distance to the nearest face, plus mean over faces of the distance to
/// the nearest point. Projections are fixed at forward time.
ad::Tensor point_mesh_loss(std::span<const Vec3> points, const ad::Tensor& vertices,
                           std::span<const Face> faces,
                           std::optional<std::span<const int>> face_subset = std::nullopt,
                           const PointTree* point_index = nullptr);
ad::Tensor point_mesh_loss(const PointCloud& points, const TriangleMesh& mesh,
                           std::optional<std::span<const int>> face_subset = std::nullopt);

/// point_mesh_loss restricted to baseline points and mesh faces carrying
/// `part`. An empty side yields 0 and appends a warning.
ad::Tensor part_loss(const LabeledPointCloud& baseline, const ad::Tensor& vertices,
                     std::span<const Face> faces, std::span<const int> face_labels, int part,
                     std::vector<std::string>* warnings = nullptr);
ad::Tensor part_loss(const LabeledPointCloud& baseline, const LabeledMesh& mesh, int part,
                     std::vector<std::string>* warnings = nullptr);

/// Root-mean-square vertex displacement. The gradient at zero displacement is 0.
ad::Tensor vert_loss(const ad::Tensor& v0, const ad::Tensor& vk);

/// mode initial: mean (|e| - ref)^2; mode zero: mean |e|^2.
ad::Tensor edge_loss(const ad::Tensor& vertices, std::span<const std::array<int, 2>> edges,
                     std::span<const double> reference_lengths, EdgeMode mode);
std::vector<double> edge_lengths(std::span<const Vec3> vertices,
                                 std::span<const std::array<int, 2>> edges);

/// Mean over edges with exactly two faces of 1 - cos(angle between normals).
ad::Tensor normal_consistency_loss(const ad::Tensor& vertices, std::span<const Face> faces,
                                   const MeshTopology& topology);

/// Uniform-weight neighbor-mean operator as a fixed sparse matrix.
ad::SparseRows neighbor_mean_matrix(const MeshTopology& topology);
/// Mean over vertices of |neighbor mean - v|^2.
ad::Tensor laplacian_loss(const ad::Tensor& vertices, const MeshTopology& topology);

struct ObjectiveValue {
  ad::Tensor total;
  LossBreakdown breakdown;
};

/// Full registration objective for one follow-up mesh and baseline cloud.
/// Everything that does not depend on the deformed vertices (topology, rest
/// edge lengths, baseline search structures, per-part subsets) is built once.
class RegistrationObjective {
 public:
  RegistrationObjective(const LabeledMesh& follow_up, LabeledPointCloud baseline, LossWeights weights,
                        EdgeMode edge_mode = EdgeMode::initial);

  /// Objective at deformed vertices `vk` (n x 3). Chamfer samples are drawn
  /// with `sample_seed`.
  ObjectiveValue evaluate(const ad::Tensor& vk, std::size_t n_samples, std::uint64_t sample_seed) const;
  /// Same objective with the chamfer sample locations given explicitly.
  ObjectiveValue evaluate_at(const ad::Tensor& vk, std::span<const int> sample_faces,
                             std::span<const Vec3> sample_barycentrics) const;

  const ad::Tensor& rest_vertices() const { return v0_; }
  const std::vector<Face>& faces() const { return faces_; }
  const LossWeights& weights() const { return weights_; }
  const LabeledPointCloud& baseline() const { return baseline_; }
  int part_count() const { return part_count_; }

 private:
  ad::Tensor v0_;
  std::vector<Face> faces_;
  std::vector<int> face_labels_;
  MeshTopology topology_;
  std::vector<double> rest_lengths_;
  LabeledPointCloud baseline_;
  LossWeights weights_;
  EdgeMode edge_mode_;
  int part_count_;

  std::unique_ptr<PointGrid> baseline_grid_;
  std::unique_ptr<PointTree> baseline_tree_;
  std::vector<std::vector<Vec3>> part_points_;
  std::vector<std::vector<int>> part_faces_;
  std::vector<std::unique_ptr<PointTree>> part_trees_;
};

/// Chamfer sample seed for a given optimization iteration.
std::uint64_t iteration_seed(std::uint64_t master_seed, std::uint64_t iteration);

}  // namespace lvreg
