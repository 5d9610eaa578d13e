#include "lvreg/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include <fmt/format.h>
#include <json.hpp>

#include "lvreg/error.hpp"
#include "lvreg/marching_cubes.hpp"
#include "lvreg/spatial_index.hpp"

namespace lvreg {

namespace fs = std::filesystem;
using nlohmann::json;

LabelVolume::LabelVolume(std::array<int, 3> dims, Vec3 spacing, Vec3 origin, std::vector<std::uint16_t> voxels)
    : dims_(dims), spacing_(spacing), origin_(origin), voxels_(std::move(voxels)) {
  std::size_t n = 1;
  for (int d : dims_) {
    if (d < 1) throw ValidationError(fmt::format("volume dims must be >= 1, got {}", d));
    n *= static_cast<std::size_t>(d);
  }
  if (voxels_.size() != n) {
    throw ValidationError(fmt::format("volume has {} voxels, dims imply {}", voxels_.size(), n));
  }
  for (int a = 0; a < 3; ++a) {
    if (!(spacing_[a] > 0.0) || !std::isfinite(spacing_[a])) throw ValidationError("volume spacing must be > 0");
    if (!std::isfinite(origin_[a])) throw ValidationError("volume origin must be finite");
  }
}

Vec3 LabelVolume::center(int i, int j, int k) const {
  return origin_ + Vec3(i, j, k).cwiseProduct(spacing_);
}

std::size_t LabelVolume::count(int label_value) const {
  return static_cast<std::size_t>(
      std::count(voxels_.begin(), voxels_.end(), static_cast<std::uint16_t>(label_value)));
}

StructureMap::StructureMap(int lv, std::vector<int> values, PartLabelSet names)
    : lv_value(lv), part_values(std::move(values)), parts(std::move(names)) {
  if (static_cast<int>(part_values.size()) != parts.size()) {
    throw ValidationError(fmt::format("structure map has {} label values for {} part names", part_values.size(),
                                      parts.size()));
  }
  std::set<int> seen{lv_value};
  if (lv_value <= 0) throw ValidationError("LV label value must be positive");
  for (int v : part_values) {
    if (v <= 0) throw ValidationError("part label values must be positive");
    if (!seen.insert(v).second) throw ValidationError(fmt::format("label value {} used twice", v));
  }
}

StructureMap StructureMap::sequential(int part_count) {
  std::vector<int> values(static_cast<std::size_t>(part_count));
  for (int i = 0; i < part_count; ++i) values[static_cast<std::size_t>(i)] = i + 2;
  return StructureMap(1, std::move(values), PartLabelSet::with_count(part_count));
}

int StructureMap::part_of(int label_value) const {
  for (std::size_t i = 0; i < part_values.size(); ++i) {
    if (part_values[i] == label_value) return static_cast<int>(i);
  }
  return -1;
}

void StructureMap::validate(const LabelVolume& volume) const {
  if (volume.count(lv_value) == 0) throw ValidationError(fmt::format("LV label {} absent from volume", lv_value));
  for (std::size_t i = 0; i < part_values.size(); ++i) {
    if (volume.count(part_values[i]) == 0) {
      throw ValidationError(fmt::format("structure '{}' (label {}) has no voxels", parts.name(static_cast<int>(i)),
                                        part_values[i]));
    }
  }
}

TriangleMesh extract_surface(const LabelVolume& volume, int label_value) {
  if (volume.count(label_value) == 0) throw ValidationError("empty mask");
  const auto& d = volume.dims();
  const std::array<int, 3> padded{d[0] + 2, d[1] + 2, d[2] + 2};
  std::vector<std::uint8_t> inside(static_cast<std::size_t>(padded[0]) * padded[1] * padded[2], 0);
  for (int k = 0; k < d[2]; ++k) {
    for (int j = 0; j < d[1]; ++j) {
      for (int i = 0; i < d[0]; ++i) {
        if (volume.at(i, j, k) != label_value) continue;
        inside[(static_cast<std::size_t>(k + 1) * padded[1] + static_cast<std::size_t>(j + 1)) * padded[0] +
               static_cast<std::size_t>(i + 1)] = 1;
      }
    }
  }
  return mc::extract_binary(inside, padded, volume.spacing(), volume.origin() - volume.spacing());
}

PointCloud surface_point_cloud(const LabelVolume& volume, int label_value, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw ValidationError("point count must be >= 1");
  return sample_surface(extract_surface(volume, label_value), n, seed).points;
}

std::vector<int> nearest_part_labels(std::span<const Vec3> points, const LabelVolume& volume,
                                     const StructureMap& map) {
  if (map.part_count() == 0) throw ValidationError("structure map has no peripheral structures");
  // Voxel centers grouped by part, so the grid's lowest-index tie rule picks
  // the lowest part.
  std::vector<std::vector<Vec3>> by_part(static_cast<std::size_t>(map.part_count()));
  const auto& d = volume.dims();
  for (int k = 0; k < d[2]; ++k) {
    for (int j = 0; j < d[1]; ++j) {
      for (int i = 0; i < d[0]; ++i) {
        const int part = map.part_of(volume.at(i, j, k));
        if (part >= 0) by_part[static_cast<std::size_t>(part)].push_back(volume.center(i, j, k));
      }
    }
  }
  std::vector<Vec3> centers;
  std::vector<int> owner;
  for (std::size_t p = 0; p < by_part.size(); ++p) {
    if (by_part[p].empty()) {
      throw ValidationError(fmt::format("structure '{}' has no voxels", map.parts.name(static_cast<int>(p))));
    }
    centers.insert(centers.end(), by_part[p].begin(), by_part[p].end());
    owner.insert(owner.end(), by_part[p].size(), static_cast<int>(p));
  }
  const PointGrid grid(centers);
  std::vector<int> labels(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    labels[i] = owner[static_cast<std::size_t>(grid.nearest(points[i]).first)];
  }
  return labels;
}

std::vector<int> nearest_part_labels(const PointCloud& points, const LabelVolume& volume,
                                     const StructureMap& map) {
  return nearest_part_labels(std::span<const Vec3>(points.points()), volume, map);
}

LabeledMesh label_mesh(const TriangleMesh& mesh, const LabelVolume& volume, const StructureMap& map) {
  auto labels = nearest_part_labels(std::span<const Vec3>(mesh.vertices()), volume, map);
  return LabeledMesh(mesh, std::move(labels), map.part_count());
}

namespace {

std::vector<char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError(fmt::format("cannot open '{}'", path.string()));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <class T>
T load_le(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    auto* b = reinterpret_cast<unsigned char*>(&v);
    std::reverse(b, b + sizeof(T));
  }
  return v;
}

template <class T>
void store_le(std::string& out, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  out.append(b, sizeof(T));
}

std::vector<std::uint16_t> decode_voxels(const char* p, std::size_t n, bool is_u8, const std::string& where) {
  std::vector<std::uint16_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (is_u8) {
      out[i] = static_cast<unsigned char>(p[i]);
    } else {
      const auto v = load_le<std::int16_t>(p + 2 * i);
      if (v < 0) throw ValidationError(fmt::format("negative label {} in '{}'", v, where));
      out[i] = static_cast<std::uint16_t>(v);
    }
  }
  return out;
}

Vec3 vec3_field(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_array() || j[key].size() != 3) {
    throw ValidationError(fmt::format("volume header field '{}' must be an array of 3 numbers", key));
  }
  Vec3 v;
  for (int a = 0; a < 3; ++a) {
    if (!j[key][a].is_number()) throw ValidationError(fmt::format("volume header field '{}' must be numeric", key));
    v[a] = j[key][a].get<double>();
  }
  return v;
}

}  // namespace

LabelVolume read_volume_json(const fs::path& header) {
  json j;
  try {
    std::ifstream in(header);
    if (!in) throw ValidationError(fmt::format("cannot open '{}'", header.string()));
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(fmt::format("malformed volume header '{}': {}", header.string(), e.what()));
  }
  for (const auto& [key, value] : j.items()) {
    if (key != "dims" && key != "spacing" && key != "origin" && key != "dtype" && key != "data") {
      throw ValidationError(fmt::format("unknown volume header key '{}'", key));
    }
  }
  const Vec3 dims_d = vec3_field(j, "dims");
  std::array<int, 3> dims{};
  for (int a = 0; a < 3; ++a) {
    if (dims_d[a] != std::floor(dims_d[a]) || dims_d[a] < 1) throw ValidationError("volume dims must be positive integers");
    dims[static_cast<std::size_t>(a)] = static_cast<int>(dims_d[a]);
  }
  const Vec3 spacing = vec3_field(j, "spacing");
  const Vec3 origin = vec3_field(j, "origin");
  if (!j.contains("dtype") || !j["dtype"].is_string()) throw ValidationError("volume header needs a dtype");
  const std::string dtype = j["dtype"].get<std::string>();
  if (dtype != "u8" && dtype != "i16") throw ValidationError(fmt::format("unsupported dtype '{}'", dtype));
  if (!j.contains("data") || !j["data"].is_string()) throw ValidationError("volume header needs a data path");
  const fs::path raw = header.parent_path() / j["data"].get<std::string>();

  const std::size_t n = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  const std::size_t width = dtype == "u8" ? 1 : 2;
  const auto bytes = read_bytes(raw);
  if (bytes.size() != n * width) {
    throw ValidationError(fmt::format("'{}' has {} bytes, expected {}", raw.string(), bytes.size(), n * width));
  }
  return LabelVolume(dims, spacing, origin, decode_voxels(bytes.data(), n, dtype == "u8", raw.string()));
}

void write_volume_json(const LabelVolume& volume, const fs::path& header) {
  const auto& vox = volume.voxels();
  const std::uint16_t max_label = vox.empty() ? 0 : *std::max_element(vox.begin(), vox.end());
  if (max_label > 32767) throw ValidationError("label values above 32767 cannot be stored");
  const bool u8 = max_label <= 255;
  std::string raw_bytes;
  raw_bytes.reserve(vox.size() * (u8 ? 1 : 2));
  for (std::uint16_t v : vox) {
    if (u8) {
      raw_bytes.push_back(static_cast<char>(v));
    } else {
      store_le<std::int16_t>(raw_bytes, static_cast<std::int16_t>(v));
    }
  }
  fs::path raw = header;
  raw.replace_extension(".raw");
  const auto& d = volume.dims();
  const auto& s = volume.spacing();
  const auto& o = volume.origin();
  json j;
  j["dims"] = {d[0], d[1], d[2]};
  j["spacing"] = {s[0], s[1], s[2]};
  j["origin"] = {o[0], o[1], o[2]};
  j["dtype"] = u8 ? "u8" : "i16";
  j["data"] = raw.filename().string();

  std::ofstream h(header);
  if (!h) throw Error(fmt::format("cannot write '{}'", header.string()));
  h << j.dump(2) << '\n';
  std::ofstream r(raw, std::ios::binary);
  if (!r) throw Error(fmt::format("cannot write '{}'", raw.string()));
  r.write(raw_bytes.data(), static_cast<std::streamsize>(raw_bytes.size()));
  if (!h || !r) throw Error(fmt::format("failed writing volume '{}'", header.string()));
}

LabelVolume read_nifti(const fs::path& path) {
  const std::string name = path.string();
  auto unsupported = [&](const std::string& what) {
    return ValidationError(fmt::format("unsupported NIfTI feature in '{}': {}", name, what));
  };
  if (path.extension() == ".gz") throw unsupported("compressed file");
  const auto bytes = read_bytes(path);
  if (bytes.size() < 348) throw ValidationError(fmt::format("'{}' is too short for a NIfTI-1 header", name));
  const char* h = bytes.data();
  const auto sizeof_hdr = load_le<std::int32_t>(h);
  if (sizeof_hdr != 348) {
    auto swapped = static_cast<std::uint32_t>(sizeof_hdr);
    swapped = (swapped >> 24) | ((swapped >> 8) & 0xff00U) | ((swapped << 8) & 0xff0000U) | (swapped << 24);
    if (swapped == 348) throw unsupported("big-endian byte order");
    throw ValidationError(fmt::format("'{}' is not a NIfTI-1 file", name));
  }
  if (std::memcmp(h + 344, "n+1\0", 4) != 0) {
    if (std::memcmp(h + 344, "ni1\0", 4) == 0) throw unsupported("separate header/image pair");
    throw ValidationError(fmt::format("'{}' lacks the NIfTI-1 magic", name));
  }
  std::array<std::int16_t, 8> dim{};
  for (int i = 0; i < 8; ++i) dim[static_cast<std::size_t>(i)] = load_le<std::int16_t>(h + 40 + 2 * i);
  if (dim[0] < 3 || dim[0] > 7) throw unsupported(fmt::format("dim[0] = {}", dim[0]));
  for (int i = 4; i <= dim[0]; ++i) {
    if (dim[static_cast<std::size_t>(i)] > 1) throw unsupported("more than three dimensions");
  }
  std::array<int, 3> dims{};
  for (int a = 0; a < 3; ++a) {
    if (dim[static_cast<std::size_t>(a + 1)] < 1) throw ValidationError(fmt::format("'{}' has a non-positive dim", name));
    dims[static_cast<std::size_t>(a)] = dim[static_cast<std::size_t>(a + 1)];
  }
  const auto datatype = load_le<std::int16_t>(h + 70);
  if (datatype != 2 && datatype != 4) throw unsupported(fmt::format("datatype code {}", datatype));
  Vec3 spacing;
  for (int a = 0; a < 3; ++a) spacing[a] = static_cast<double>(load_le<float>(h + 76 + 4 * (a + 1)));
  const auto vox_offset = static_cast<std::size_t>(load_le<float>(h + 108));
  const std::size_t n = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  const std::size_t width = datatype == 2 ? 1 : 2;
  if (vox_offset < 348 || bytes.size() < vox_offset + n * width) {
    throw ValidationError(fmt::format("'{}' is truncated", name));
  }

  Vec3 origin = Vec3::Zero();
  fs::path sidecar = path;
  sidecar.replace_extension(".json");
  if (fs::exists(sidecar)) {
    json j;
    try {
      std::ifstream in(sidecar);
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw ValidationError(fmt::format("malformed sidecar '{}': {}", sidecar.string(), e.what()));
    }
    if (j.contains("origin")) origin = vec3_field(j, "origin");
  }
  return LabelVolume(dims, spacing, origin, decode_voxels(h + vox_offset, n, datatype == 2, name));
}

LabelVolume read_volume(const fs::path& path) {
  const auto ext = path.extension();
  if (ext == ".nii" || ext == ".gz") return read_nifti(path);
  return read_volume_json(path);
}

}  // namespace lvreg
