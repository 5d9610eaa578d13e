#pragma once

#include <filesystem>
#include <vector>

#include "lvreg/geometry.hpp"

namespace lvreg {

/// Wavefront OBJ: `v x y z` and `f i j k` records with 1-based indices.
/// `f` entries of the form `i/t/n` are accepted; only triangles are.
TriangleMesh read_obj(const std::filesystem::path& path);
void write_obj(const TriangleMesh& mesh, const std::filesystem::path& path);

enum class PlyFormat { ascii, binary_little_endian };

/// PLY with vertex x/y/z (float or double) and a face vertex_indices list.
/// Other properties are skipped.
TriangleMesh read_ply(const std::filesystem::path& path);
void write_ply(const TriangleMesh& mesh, const std::filesystem::path& path, PlyFormat format = PlyFormat::ascii);

/// Dispatches on `.obj` / `.ply`.
TriangleMesh read_mesh(const std::filesystem::path& path);
void write_mesh(const TriangleMesh& mesh, const std::filesystem::path& path);

/// Per-vertex part labels as CSV `vertex_index,label_name`, 0-based.
void write_label_csv(std::span<const int> labels, const PartLabelSet& parts, const std::filesystem::path& path);
/// Every vertex in [0, vertex_count) must appear exactly once.
std::vector<int> read_label_csv(const std::filesystem::path& path, const PartLabelSet& parts,
                                std::size_t vertex_count);

}  // namespace lvreg
