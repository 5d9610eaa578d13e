#include "lvreg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include <fmt/format.h>

#include "lvreg/error.hpp"
#include "lvreg/random.hpp"

namespace lvreg {

void SynthSpec::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (!(radii[a] > 0.0) || !std::isfinite(radii[a])) throw ValidationError("radii must be > 0");
  }
  if (level < 0 || level > 7) throw ValidationError("subdivision level must be in [0, 7]");
  if (part_count < 1) throw ValidationError("part count must be >= 1");
  if (!(noise_sd >= 0.0)) throw ValidationError("noise sd must be >= 0");
  if (const auto* bump = std::get_if<BumpDeformation>(&deformation)) {
    if (!(bump->amplitude >= 0.0)) throw ValidationError("bump amplitude must be >= 0");
    if (!(bump->width > 0.0)) throw ValidationError("bump width must be > 0");
    if (!(bump->direction.norm() > 0.0)) throw ValidationError("bump direction must be non-zero");
  }
  if (const auto* scale = std::get_if<ScaleDeformation>(&deformation)) {
    if (!(scale->factors.minCoeff() > 0.0)) throw ValidationError("scale factors must be > 0");
  }
}

TriangleMesh make_ellipsoid(const SynthSpec& spec) {
  spec.validate();
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {
      {-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
      {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1},
  };
  std::vector<Face> faces = {
      {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
      {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
      {3, 8, 9},  {4, 9, 5},  {2, 4, 11}, {6, 2, 10}, {8, 6, 7},   {9, 8, 1},
  };
  for (Vec3& p : v) p.normalize();
  for (int l = 0; l < spec.level; ++l) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto [it, fresh] = midpoint.try_emplace({key.first, key.second}, static_cast<int>(v.size()));
      if (fresh) v.push_back((v[static_cast<std::size_t>(a)] + v[static_cast<std::size_t>(b)]).normalized());
      return it->second;
    };
    std::vector<Face> next;
    next.reserve(faces.size() * 4);
    for (const Face& f : faces) {
      const int ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
      next.push_back({f[0], ab, ca});
      next.push_back({f[1], bc, ab});
      next.push_back({f[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    faces = std::move(next);
  }
  for (Vec3& p : v) p = p.cwiseProduct(spec.radii);
  return TriangleMesh(std::move(v), std::move(faces));
}

std::vector<int> angular_part_labels(std::span<const Vec3> points, int part_count) {
  if (part_count < 1) throw ValidationError("part count must be >= 1");
  std::vector<int> labels(points.size());
  const double m = static_cast<double>(part_count);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double a = std::atan2(points[i][1], points[i][0]);
    const int l = static_cast<int>(std::floor(m * (a + std::numbers::pi) / (2.0 * std::numbers::pi)));
    labels[i] = std::clamp(l, 0, part_count - 1);
  }
  return labels;
}

DeformedMesh apply_deformation(const TriangleMesh& mesh, const SynthSpec& spec) {
  spec.validate();
  std::vector<Vec3> v = mesh.vertices();
  if (const auto* bump = std::get_if<BumpDeformation>(&spec.deformation)) {
    const Vec3 dir = bump->direction.normalized();
    for (Vec3& p : v) {
      const double r = p.norm();
      if (r == 0.0) continue;
      const Vec3 unit = p / r;
      const double angle = std::atan2(unit.cross(dir).norm(), unit.dot(dir));
      const double s = angle / bump->width;
      p += bump->amplitude * std::exp(-s * s) * unit;
    }
  } else if (const auto* scale = std::get_if<ScaleDeformation>(&spec.deformation)) {
    for (Vec3& p : v) p = p.cwiseProduct(scale->factors);
  }
  if (spec.noise_sd > 0.0) {
    Rng rng(derive_seed(spec.seed, 0x6e6f697365ULL));
    for (Vec3& p : v) {
      for (int a = 0; a < 3; ++a) p[a] += spec.noise_sd * rng.normal();
    }
  }
  DeformedMesh out;
  out.truth.resize(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out.truth[i] = v[i] - mesh.vertices()[i];
  out.mesh = mesh.with_vertices(std::move(v));
  return out;
}

LabelVolume voxelize(const TriangleMesh& mesh, double spacing, int part_count, int shell_voxels) {
  if (!(spacing > 0.0) || !std::isfinite(spacing)) throw ValidationError("spacing must be > 0");
  if (part_count < 1) throw ValidationError("part count must be >= 1");
  if (shell_voxels < 0) throw ValidationError("shell width must be >= 0");
  if (mesh.face_count() == 0) throw ValidationError("cannot voxelize an empty mesh");
  const BoundingBox box = bounding_box(mesh.vertices());
  const Vec3 extent = box.max - box.min;
  if (spacing > extent.minCoeff() / 4.0) {
    throw ValidationError(fmt::format("spacing {} is larger than a quarter of the bounding box ({})", spacing,
                                      extent.minCoeff()));
  }

  // Grid aligned to multiples of the spacing, with room for the shells.
  const double margin = (shell_voxels + 2) * spacing;
  Vec3 origin;
  std::array<int, 3> dims{};
  for (int a = 0; a < 3; ++a) {
    origin[a] = std::floor((box.min[a] - margin) / spacing) * spacing;
    dims[static_cast<std::size_t>(a)] = static_cast<int>(std::ceil((box.max[a] + margin - origin[a]) / spacing)) + 1;
  }
  const int nx = dims[0], ny = dims[1], nz = dims[2];

  // Rays along +x through voxel centers, nudged off lattice-aligned mesh features.
  const double ey = spacing * 1e-6 * (std::numbers::sqrt2 - 1.0);
  const double ez = spacing * 1e-6 * (std::numbers::sqrt3 - 1.0);
  std::vector<std::vector<int>> rows(static_cast<std::size_t>(ny) * nz);
  const auto& vs = mesh.vertices();
  const auto& fs = mesh.faces();
  for (std::size_t f = 0; f < fs.size(); ++f) {
    const Vec3& a = vs[static_cast<std::size_t>(fs[f][0])];
    const Vec3& b = vs[static_cast<std::size_t>(fs[f][1])];
    const Vec3& c = vs[static_cast<std::size_t>(fs[f][2])];
    const double ylo = std::min({a[1], b[1], c[1]}), yhi = std::max({a[1], b[1], c[1]});
    const double zlo = std::min({a[2], b[2], c[2]}), zhi = std::max({a[2], b[2], c[2]});
    const int j0 = std::max(0, static_cast<int>(std::ceil((ylo - origin[1] - ey) / spacing)));
    const int j1 = std::min(ny - 1, static_cast<int>(std::floor((yhi - origin[1] - ey) / spacing)));
    const int k0 = std::max(0, static_cast<int>(std::ceil((zlo - origin[2] - ez) / spacing)));
    const int k1 = std::min(nz - 1, static_cast<int>(std::floor((zhi - origin[2] - ez) / spacing)));
    for (int k = k0; k <= k1; ++k) {
      for (int j = j0; j <= j1; ++j) rows[static_cast<std::size_t>(k) * ny + j].push_back(static_cast<int>(f));
    }
  }

  std::vector<std::uint8_t> inside(static_cast<std::size_t>(nx) * ny * nz, 0);
  std::vector<double> xs;
  for (int k = 0; k < nz; ++k) {
    for (int j = 0; j < ny; ++j) {
      const double py = origin[1] + j * spacing + ey;
      const double pz = origin[2] + k * spacing + ez;
      xs.clear();
      for (int f : rows[static_cast<std::size_t>(k) * ny + j]) {
        const Vec3& a = vs[static_cast<std::size_t>(fs[static_cast<std::size_t>(f)][0])];
        const Vec3& b = vs[static_cast<std::size_t>(fs[static_cast<std::size_t>(f)][1])];
        const Vec3& c = vs[static_cast<std::size_t>(fs[static_cast<std::size_t>(f)][2])];
        const double det = (b[1] - a[1]) * (c[2] - a[2]) - (c[1] - a[1]) * (b[2] - a[2]);
        if (det == 0.0) continue;
        const double w1 = ((py - a[1]) * (c[2] - a[2]) - (c[1] - a[1]) * (pz - a[2])) / det;
        const double w2 = ((b[1] - a[1]) * (pz - a[2]) - (py - a[1]) * (b[2] - a[2])) / det;
        const double w0 = 1.0 - w1 - w2;
        if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0) continue;
        xs.push_back(w0 * a[0] + w1 * b[0] + w2 * c[0]);
      }
      std::sort(xs.begin(), xs.end());
      std::size_t crossed = 0;
      for (int i = 0; i < nx; ++i) {
        const double px = origin[0] + i * spacing;
        while (crossed < xs.size() && xs[crossed] < px) ++crossed;
        if (crossed % 2 == 1) inside[(static_cast<std::size_t>(k) * ny + j) * nx + i] = 1;
      }
    }
  }

  std::vector<std::uint16_t> voxels(inside.size(), 0);
  auto idx = [&](int i, int j, int k) { return (static_cast<std::size_t>(k) * ny + j) * nx + i; };
  std::vector<std::array<int, 3>> offsets;
  for (int dk = -shell_voxels; dk <= shell_voxels; ++dk) {
    for (int dj = -shell_voxels; dj <= shell_voxels; ++dj) {
      for (int di = -shell_voxels; di <= shell_voxels; ++di) {
        if (di * di + dj * dj + dk * dk <= shell_voxels * shell_voxels) offsets.push_back({di, dj, dk});
      }
    }
  }
  // The nearest interior voxel to any outside voxel has an outside face
  // neighbour, so stamping from those covers the whole shell.
  std::vector<std::uint8_t> shell(inside.size(), 0);
  for (int k = 0; k < nz; ++k) {
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        if (!inside[idx(i, j, k)]) continue;
        voxels[idx(i, j, k)] = 1;
        const bool boundary = i == 0 || j == 0 || k == 0 || i == nx - 1 || j == ny - 1 || k == nz - 1 ||
                              !inside[idx(i - 1, j, k)] || !inside[idx(i + 1, j, k)] || !inside[idx(i, j - 1, k)] ||
                              !inside[idx(i, j + 1, k)] || !inside[idx(i, j, k - 1)] || !inside[idx(i, j, k + 1)];
        if (!boundary) continue;
        for (const auto& o : offsets) {
          const int a = i + o[0], b = j + o[1], c = k + o[2];
          if (a < 0 || b < 0 || c < 0 || a >= nx || b >= ny || c >= nz) continue;
          if (!inside[idx(a, b, c)]) shell[idx(a, b, c)] = 1;
        }
      }
    }
  }
  for (int k = 0; k < nz; ++k) {
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        if (!shell[idx(i, j, k)]) continue;
        const Vec3 center = origin + Vec3(i, j, k) * spacing;
        voxels[idx(i, j, k)] = static_cast<std::uint16_t>(2 + angular_part_labels(std::span(&center, 1), part_count)[0]);
      }
    }
  }
  return LabelVolume(dims, Vec3::Constant(spacing), origin, std::move(voxels));
}

void CohortSpec::validate() const {
  if (n_normal < 2 || n_demented < 2) throw ValidationError("each group needs at least 2 subjects");
  if (!(effect > 0.0) || !std::isfinite(effect)) throw ValidationError("effect must be > 0");
  if (!(bump_amplitude >= 0.0)) throw ValidationError("bump amplitude must be >= 0");
  if (!(jitter >= 0.0 && jitter < 1.0)) throw ValidationError("jitter must be in [0, 1)");
  if (!(spacing > 0.0)) throw ValidationError("spacing must be > 0");
}

std::vector<CohortSubject> make_cohort(const CohortSpec& spec) {
  spec.validate();
  SynthSpec base;
  base.radii = spec.radii;
  base.level = spec.level;
  base.part_count = spec.part_count;
  const TriangleMesh followup_mesh = make_ellipsoid(base);
  const LabelVolume followup = voxelize(followup_mesh, spec.spacing, spec.part_count);

  Rng rng(derive_seed(spec.seed, 0x636f686f7274ULL));
  std::vector<CohortSubject> out;
  for (int g = 0; g < 2; ++g) {
    const Group group = g == 0 ? Group::normal : Group::demented;
    const int n = g == 0 ? spec.n_normal : spec.n_demented;
    for (int s = 0; s < n; ++s) {
      CohortSubject subject;
      subject.record.id = fmt::format("{}{:02d}", g == 0 ? 'N' : 'D', s + 1);
      subject.record.group = group;
      subject.record.sex = rng.uniform() < 0.5 ? "F" : "M";
      subject.record.baseline_age = rng.uniform(65.0, 85.0);
      subject.record.delta_t = rng.uniform(1.0, 3.0);
      subject.record.etiv = rng.uniform(1.2e6, 1.6e6);
      const double jitter = rng.uniform(1.0 - spec.jitter, 1.0 + spec.jitter);
      subject.bump_amplitude = spec.bump_amplitude * (group == Group::demented ? spec.effect : 1.0) * jitter;

      SynthSpec deform = base;
      deform.deformation = BumpDeformation{Vec3::UnitZ(), subject.bump_amplitude, spec.bump_width};
      subject.baseline = voxelize(apply_deformation(followup_mesh, deform).mesh, spec.spacing, spec.part_count);
      subject.followup = followup;
      out.push_back(std::move(subject));
    }
  }
  return out;
}

}  // namespace lvreg
