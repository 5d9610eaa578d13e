#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "lvreg/geometry.hpp"

namespace lvreg::mc {

/// Cube corner offsets; bit c of a case index is set when corner c is inside.
inline constexpr std::array<std::array<int, 3>, 8> kCorners = {{
    {0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}, {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1},
}};

/// Cube edges as corner pairs.
inline constexpr std::array<std::array<int, 2>, 12> kEdges = {{
    {0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6}, {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7},
}};

/// Cube faces, corners counter-clockwise seen from outside the cube.
inline constexpr std::array<std::array<int, 4>, 6> kFaces = {{
    {0, 3, 2, 1}, {4, 5, 6, 7}, {0, 1, 5, 4}, {3, 7, 6, 2}, {0, 4, 7, 3}, {1, 2, 6, 5},
}};

using EdgeTriangle = std::array<int, 3>;

/// Triangles (as cube-edge triples) for each of the 256 corner cases. Face
/// ambiguities are resolved the same way from both sides of a shared face, so
/// neighbouring cubes always agree and the output is crack-free. Triangles are
/// wound counter-clockwise seen from outside the inside region.
const std::array<std::vector<EdgeTriangle>, 256>& triangle_table();

/// Iso-surface at 0.5 of a binary grid (x fastest). Grid point (i, j, k) maps
/// to origin + (i, j, k) * spacing. The caller pads the grid if a closed
/// surface is required.
TriangleMesh extract_binary(std::span<const std::uint8_t> inside, const std::array<int, 3>& dims,
                            const Vec3& spacing, const Vec3& origin);

}  // namespace lvreg::mc
