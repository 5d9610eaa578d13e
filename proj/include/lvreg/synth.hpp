#pragma once

#include <cstdint>
#include <variant>
#include <vector>

#include "lvreg/analysis.hpp"
#include "lvreg/geometry.hpp"
#include "lvreg/volume.hpp"

namespace lvreg {

struct BumpDeformation {
  Vec3 direction = Vec3::UnitZ();
  double amplitude = 0.0;  // mm
  double width = 0.5;      // radians
};

struct ScaleDeformation {
  Vec3 factors = Vec3::Ones();
};

using SynthDeformation = std::variant<std::monostate, BumpDeformation, ScaleDeformation>;

struct SynthSpec {
  Vec3 radii = Vec3::Ones();
  int level = 2;
  int part_count = 5;
  SynthDeformation deformation;
  double noise_sd = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Icosahedron subdivided `level` times, projected to the unit sphere and
/// scaled by the radii. 10 * 4^level + 2 vertices, outward winding.
TriangleMesh make_ellipsoid(const SynthSpec& spec);

/// floor(m * (atan2(y, x) + pi) / (2 pi)), clamped to m - 1.
std::vector<int> angular_part_labels(std::span<const Vec3> points, int part_count);

struct DeformedMesh {
  TriangleMesh mesh;
  std::vector<Vec3> truth;  // per-vertex displacement from the input mesh
};

/// Bump or anisotropic scale about the origin, then seeded Gaussian vertex
/// noise.
DeformedMesh apply_deformation(const TriangleMesh& mesh, const SynthSpec& spec);

/// Parity voxelization of a closed mesh. Interior voxels get label 1; outside
/// voxels within `shell_voxels` voxels of the interior get 2 + angular sector.
LabelVolume voxelize(const TriangleMesh& mesh, double spacing, int part_count, int shell_voxels = 3);

struct CohortSpec {
  int n_normal = 10;
  int n_demented = 10;
  double effect = 3.0;
  std::uint64_t seed = 0;
  Vec3 radii{16.0, 10.0, 10.0};
  int level = 4;
  int part_count = 5;
  double bump_amplitude = 2.0;  // mm, normal group
  double bump_width = 0.8;      // radians
  double jitter = 0.2;          // amplitude factor drawn from [1 - jitter, 1 + jitter]
  double spacing = 1.0;         // mm

  void validate() const;
};

struct CohortSubject {
  SubjectRecord record;
  LabelVolume baseline;
  LabelVolume followup;
  double bump_amplitude = 0.0;
};

/// Follow-up is the plain ellipsoid; baseline carries a bump at the +z pole of
/// amplitude a * (effect for demented, else 1) * jitter.
std::vector<CohortSubject> make_cohort(const CohortSpec& spec);

}  // namespace lvreg
