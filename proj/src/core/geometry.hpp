#pragma once

#include <cstddef>
#include <vector>

#include "errors.hpp"

namespace pskn {

// A finite set of 3D points with an optional row-aligned feature block.
struct PointCloud {
  std::vector<double> points;    // n x 3, row-major
  std::vector<double> features;  // n x feature_width, empty when width is 0
  std::size_t n = 0;
  std::size_t feature_width = 0;

  const double* point(std::size_t i) const { return points.data() + 3 * i; }
  bool has_features() const { return feature_width > 0; }

  // Throws on NaN/Inf coordinates or a misaligned feature block.
  void validate() const;
};

// Radius-bounded, k-capped neighborhoods around sampled centers. Offsets are
// stored relative to the center; under-full groups are padded by replicating
// the nearest neighbor, with valid_counts recording the pre-padding size.
struct GroupedNeighborhood {
  std::vector<double> centers;              // m x 3
  std::vector<std::size_t> center_indices;  // m, empty for free-form centers
  std::vector<std::size_t> indices;         // m x k, into the source cloud
  std::vector<double> grouped_points;       // m x k x 3, center-relative
  std::vector<double> grouped_features;     // m x k x feature_width
  std::vector<std::size_t> valid_counts;    // m
  double radius = 0.0;
  std::size_t m = 0;
  std::size_t k = 0;
  std::size_t feature_width = 0;
};

// Centers the cloud on its centroid and scales so the farthest point sits on
// the unit sphere. A cloud of coincident points collapses to the origin.
PointCloud normalize_unit_sphere(const PointCloud& cloud);

// Index of the point with lexicographically smallest (x, y, z); the
// deterministic sampling start used outside training.
std::size_t lex_smallest_index(const PointCloud& cloud);

// Greedy farthest point sampling: starting from `start`, repeatedly picks
// the point with the largest minimum distance to the chosen set, breaking
// ties by smallest index. Deterministic given point order and start.
std::vector<std::size_t> farthest_point_sample(const PointCloud& cloud,
                                               std::size_t n_out,
                                               std::size_t start);

// All cloud points within radius r of each center, capped at the k nearest
// (distance ties broken by lexicographic coordinate comparison, then index).
// Plain O(n*m) distance scan; the reference implementation.
GroupedNeighborhood ball_query(const PointCloud& cloud,
                               const std::vector<double>& centers, double r,
                               std::size_t k);

// Uniform-grid accelerated ball query; output is identical to ball_query.
GroupedNeighborhood ball_query_grid(const PointCloud& cloud,
                                    const std::vector<double>& centers,
                                    double r, std::size_t k);

// Row lookup of feature rows (n x c) by an index block; returns the gathered
// rows in index order, indices.size() x c.
std::vector<double> gather_features(const std::vector<double>& features,
                                    std::size_t c,
                                    const std::vector<std::size_t>& indices);

// Sampling, grouping and gathering composed: FPS picks centers, ball query
// groups around them, and the cloud's feature rows (when present) are
// gathered per neighbor. center_indices holds the FPS picks.
GroupedNeighborhood sample_and_group(const PointCloud& cloud,
                                     std::size_t n_out, double r,
                                     std::size_t k, std::size_t start);

}  // namespace pskn
