#include "geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <unordered_map>

namespace pskn {

namespace {

double dist2(const double* a, const double* b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

bool lex_less(const double* a, const double* b) {
  for (int i = 0; i < 3; ++i) {
    if (a[i] < b[i]) return true;
    if (a[i] > b[i]) return false;
  }
  return false;
}

struct Candidate {
  double d2;
  std::size_t index;
};

// Orders in-radius candidates: nearest first, distance ties by lexicographic
// coordinates, exact duplicates by index. Keeps grouping invariant under
// permutation of the input cloud.
void select_neighbors(const PointCloud& cloud, const double* center,
                      std::vector<Candidate>& cands, double r, std::size_t k,
                      std::size_t center_row, GroupedNeighborhood& out) {
  if (cands.empty())
    throw ValueError("ball_query: center (" + std::to_string(center[0]) +
                     ", " + std::to_string(center[1]) + ", " +
                     std::to_string(center[2]) + ") has no neighbor within " +
                     std::to_string(r));
  std::sort(cands.begin(), cands.end(),
            [&](const Candidate& a, const Candidate& b) {
              if (a.d2 != b.d2) return a.d2 < b.d2;
              const double* pa = cloud.point(a.index);
              const double* pb = cloud.point(b.index);
              if (lex_less(pa, pb)) return true;
              if (lex_less(pb, pa)) return false;
              return a.index < b.index;
            });
  const std::size_t valid = std::min(cands.size(), k);
  out.valid_counts[center_row] = valid;
  for (std::size_t s = 0; s < k; ++s) {
    const Candidate& c = cands[s < valid ? s : 0];  // pad with the nearest
    const double* p = cloud.point(c.index);
    out.indices[center_row * k + s] = c.index;
    double* slot = out.grouped_points.data() + (center_row * k + s) * 3;
    slot[0] = p[0] - center[0];
    slot[1] = p[1] - center[1];
    slot[2] = p[2] - center[2];
  }
}

GroupedNeighborhood make_grouping(const std::vector<double>& centers,
                                  double r, std::size_t k) {
  if (r <= 0.0)
    throw ValueError("ball_query: radius must be positive, got " +
                     std::to_string(r));
  if (k < 1) throw ValueError("ball_query: neighbor cap must be at least 1");
  if (centers.size() % 3 != 0)
    throw ShapeError("ball_query: centers must be m x 3 coordinates");
  GroupedNeighborhood out;
  out.m = centers.size() / 3;
  out.k = k;
  out.radius = r;
  out.centers = centers;
  out.indices.assign(out.m * k, 0);
  out.grouped_points.assign(out.m * k * 3, 0.0);
  out.valid_counts.assign(out.m, 0);
  return out;
}

int64_t cell_of(double v, double r) {
  return static_cast<int64_t>(std::floor(v / r));
}

uint64_t cell_key(int64_t cx, int64_t cy, int64_t cz) {
  const uint64_t a = static_cast<uint64_t>(cx) * 0x9e3779b97f4a7c15ULL;
  const uint64_t b = static_cast<uint64_t>(cy) * 0xc2b2ae3d27d4eb4fULL;
  const uint64_t c = static_cast<uint64_t>(cz) * 0x165667b19e3779f9ULL;
  return a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6)) ^ (c << 1);
}

}  // namespace

void PointCloud::validate() const {
  if (points.size() != n * 3)
    throw ShapeError("point cloud: " + std::to_string(n) +
                     " points need " + std::to_string(n * 3) +
                     " coordinates, got " + std::to_string(points.size()));
  for (double v : points)
    if (!std::isfinite(v))
      throw ValueError("point cloud: non-finite coordinate");
  if (feature_width == 0) {
    if (!features.empty())
      throw ShapeError("point cloud: feature block present but width is 0");
  } else if (features.size() != n * feature_width) {
    throw ShapeError("point cloud: feature block is not n x width");
  }
}

PointCloud normalize_unit_sphere(const PointCloud& cloud) {
  if (cloud.n == 0)
    throw ValueError("normalize_unit_sphere: empty point cloud");
  PointCloud out = cloud;
  double cx = 0.0, cy = 0.0, cz = 0.0;
  for (std::size_t i = 0; i < cloud.n; ++i) {
    const double* p = cloud.point(i);
    cx += p[0];
    cy += p[1];
    cz += p[2];
  }
  cx /= static_cast<double>(cloud.n);
  cy /= static_cast<double>(cloud.n);
  cz /= static_cast<double>(cloud.n);
  double max_norm2 = 0.0;
  for (std::size_t i = 0; i < cloud.n; ++i) {
    double* p = out.points.data() + 3 * i;
    p[0] -= cx;
    p[1] -= cy;
    p[2] -= cz;
    max_norm2 = std::max(max_norm2, p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
  }
  if (max_norm2 > 0.0) {
    const double inv = 1.0 / std::sqrt(max_norm2);
    for (double& v : out.points) v *= inv;
  }
  return out;
}

std::size_t lex_smallest_index(const PointCloud& cloud) {
  if (cloud.n == 0)
    throw ValueError("lex_smallest_index: empty point cloud");
  std::size_t best = 0;
  for (std::size_t i = 1; i < cloud.n; ++i)
    if (lex_less(cloud.point(i), cloud.point(best))) best = i;
  return best;
}

std::vector<std::size_t> farthest_point_sample(const PointCloud& cloud,
                                               std::size_t n_out,
                                               std::size_t start) {
  if (n_out < 1 || n_out > cloud.n)
    throw ValueError("farthest_point_sample: cannot draw " +
                     std::to_string(n_out) + " points from " +
                     std::to_string(cloud.n));
  if (start >= cloud.n)
    throw ValueError("farthest_point_sample: start index " +
                     std::to_string(start) + " out of range");
  std::vector<std::size_t> picked;
  picked.reserve(n_out);
  picked.push_back(start);
  std::vector<double> min_d2(cloud.n, std::numeric_limits<double>::infinity());
  for (std::size_t step = 1; step < n_out; ++step) {
    const double* last = cloud.point(picked.back());
    double best_d2 = -1.0;
    std::size_t best = 0;
    for (std::size_t i = 0; i < cloud.n; ++i) {
      min_d2[i] = std::min(min_d2[i], dist2(cloud.point(i), last));
      if (min_d2[i] > best_d2) {  // strict: ties keep the smallest index
        best_d2 = min_d2[i];
        best = i;
      }
    }
    picked.push_back(best);
  }
  return picked;
}

GroupedNeighborhood ball_query(const PointCloud& cloud,
                               const std::vector<double>& centers, double r,
                               std::size_t k) {
  GroupedNeighborhood out = make_grouping(centers, r, k);
  const double r2 = r * r;
  std::vector<Candidate> cands;
  for (std::size_t j = 0; j < out.m; ++j) {
    const double* c = centers.data() + 3 * j;
    cands.clear();
    for (std::size_t i = 0; i < cloud.n; ++i) {
      const double d2 = dist2(cloud.point(i), c);
      if (d2 <= r2) cands.push_back({d2, i});
    }
    select_neighbors(cloud, c, cands, r, k, j, out);
  }
  return out;
}

GroupedNeighborhood ball_query_grid(const PointCloud& cloud,
                                    const std::vector<double>& centers,
                                    double r, std::size_t k) {
  GroupedNeighborhood out = make_grouping(centers, r, k);
  const double r2 = r * r;

  // Bucket points by cell of side r; any point within r of a center lies in
  // one of the 27 cells around the center's cell.
  std::unordered_map<uint64_t, std::vector<std::size_t>> grid;
  grid.reserve(cloud.n * 2);
  for (std::size_t i = 0; i < cloud.n; ++i) {
    const double* p = cloud.point(i);
    grid[cell_key(cell_of(p[0], r), cell_of(p[1], r), cell_of(p[2], r))]
        .push_back(i);
  }

  std::vector<Candidate> cands;
  for (std::size_t j = 0; j < out.m; ++j) {
    const double* c = centers.data() + 3 * j;
    const int64_t cx = cell_of(c[0], r), cy = cell_of(c[1], r),
                  cz = cell_of(c[2], r);
    cands.clear();
    for (int64_t dx = -1; dx <= 1; ++dx)
      for (int64_t dy = -1; dy <= 1; ++dy)
        for (int64_t dz = -1; dz <= 1; ++dz) {
          auto it = grid.find(cell_key(cx + dx, cy + dy, cz + dz));
          if (it == grid.end()) continue;
          for (std::size_t i : it->second) {
            const double d2 = dist2(cloud.point(i), c);
            if (d2 <= r2) cands.push_back({d2, i});
          }
        }
    select_neighbors(cloud, c, cands, r, k, j, out);
  }
  return out;
}

std::vector<double> gather_features(const std::vector<double>& features,
                                    std::size_t c,
                                    const std::vector<std::size_t>& indices) {
  if (c == 0) throw ValueError("gather_features: feature width is 0");
  if (features.size() % c != 0)
    throw ShapeError("gather_features: feature block is not n x " +
                     std::to_string(c));
  const std::size_t n = features.size() / c;
  std::vector<double> out(indices.size() * c);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= n)
      throw ValueError("gather_features: index " + std::to_string(indices[r]) +
                       " out of range for " + std::to_string(n) + " rows");
    std::copy_n(features.begin() + indices[r] * c, c, out.begin() + r * c);
  }
  return out;
}

GroupedNeighborhood sample_and_group(const PointCloud& cloud,
                                     std::size_t n_out, double r,
                                     std::size_t k, std::size_t start) {
  std::vector<std::size_t> picks = farthest_point_sample(cloud, n_out, start);
  std::vector<double> centers(n_out * 3);
  for (std::size_t j = 0; j < n_out; ++j)
    std::copy_n(cloud.point(picks[j]), 3, centers.begin() + 3 * j);
  GroupedNeighborhood out = ball_query_grid(cloud, centers, r, k);
  out.center_indices = std::move(picks);
  if (cloud.has_features()) {
    out.feature_width = cloud.feature_width;
    out.grouped_features =
        gather_features(cloud.features, cloud.feature_width, out.indices);
  }
  return out;
}

}  // namespace pskn
