#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lvreg/geometry.hpp"

namespace lvreg {

/// Dense label volume, x fastest. Voxel (i, j, k) has its center at
/// origin + (i, j, k) * spacing, in mm.
class LabelVolume {
 public:
  LabelVolume() = default;
  LabelVolume(std::array<int, 3> dims, Vec3 spacing, Vec3 origin, std::vector<std::uint16_t> voxels);

  const std::array<int, 3>& dims() const { return dims_; }
  const Vec3& spacing() const { return spacing_; }
  const Vec3& origin() const { return origin_; }
  const std::vector<std::uint16_t>& voxels() const { return voxels_; }

  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * static_cast<std::size_t>(dims_[1]) + static_cast<std::size_t>(j)) *
               static_cast<std::size_t>(dims_[0]) +
           static_cast<std::size_t>(i);
  }
  std::uint16_t at(int i, int j, int k) const { return voxels_[index(i, j, k)]; }
  Vec3 center(int i, int j, int k) const;
  std::size_t count(int label_value) const;
  double voxel_volume() const { return spacing_.prod(); }

 private:
  std::array<int, 3> dims_{0, 0, 0};
  Vec3 spacing_ = Vec3::Ones();
  Vec3 origin_ = Vec3::Zero();
  std::vector<std::uint16_t> voxels_;
};

/// Which label value is the LV and which values are the peripheral parts.
/// Part index = position in `part_values`, matching `parts`.
struct StructureMap {
  StructureMap() : parts(PartLabelSet::defaults()) {}
  StructureMap(int lv_value, std::vector<int> part_values, PartLabelSet parts);

  /// LV = 1, part i = i + 2 (the synthetic cohort convention).
  static StructureMap sequential(int part_count);

  int lv_value = 1;
  std::vector<int> part_values;
  PartLabelSet parts;

  int part_count() const { return static_cast<int>(part_values.size()); }
  /// Part index for a label value, or -1.
  int part_of(int label_value) const;
  /// Throws ValidationError unless every referenced value occurs in `volume`.
  void validate(const LabelVolume& volume) const;
};

/// Closed iso-surface of one label (volume zero-padded by one voxel).
TriangleMesh extract_surface(const LabelVolume& volume, int label_value);

/// extract_surface followed by area-weighted surface sampling.
PointCloud surface_point_cloud(const LabelVolume& volume, int label_value, std::size_t n, std::uint64_t seed);

/// Part owning the nearest peripheral voxel center; ties go to the lowest part
/// index.
std::vector<int> nearest_part_labels(std::span<const Vec3> points, const LabelVolume& volume,
                                     const StructureMap& map);
std::vector<int> nearest_part_labels(const PointCloud& points, const LabelVolume& volume,
                                     const StructureMap& map);

LabeledMesh label_mesh(const TriangleMesh& mesh, const LabelVolume& volume, const StructureMap& map);

/// JSON header `{dims, spacing, origin, dtype, data}` next to a little-endian
/// raw file. `data` is relative to the header's directory.
LabelVolume read_volume_json(const std::filesystem::path& header);
void write_volume_json(const LabelVolume& volume, const std::filesystem::path& header);

/// Uncompressed little-endian NIfTI-1 with uint8 or int16 voxels. Origin is 0
/// unless a `<name>.json` sidecar provides `{"origin": [x, y, z]}`.
LabelVolume read_nifti(const std::filesystem::path& path);

/// Dispatches on extension: `.nii` or JSON header.
LabelVolume read_volume(const std::filesystem::path& path);

}  // namespace lvreg
