#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "geometry.hpp"

namespace pskn {

// Triangle mesh; polygon faces are fan-triangulated on load.
struct Mesh {
  std::vector<double> vertices;                 // v x 3, row-major
  std::vector<std::array<std::size_t, 3>> faces;

  std::size_t vertex_count() const { return vertices.size() / 3; }
  const double* vertex(std::size_t i) const { return vertices.data() + 3 * i; }
};

// Parses ASCII OFF: an `OFF` header token (possibly fused with the vertex
// count, as in some ModelNet files), `V F E` counts, V coordinate triples,
// then F polygon lines (`n i0 .. i_{n-1}`). Comments (#) and blank lines are
// skipped; anything after the last face is an error. Failures carry the
// offending line number.
Mesh parse_off(const std::string& text);

// Canonical OFF text for a mesh; parse_off(serialize_off(m)) == m.
std::string serialize_off(const Mesh& mesh);

Mesh read_off_file(const std::string& path);

// Draws n points from the surface, triangle picked with probability
// proportional to its area, position uniform in the triangle. Deterministic
// per seed.
PointCloud sample_mesh(const Mesh& mesh, std::size_t n, std::uint64_t seed);

}  // namespace pskn
