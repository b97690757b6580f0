#include "bench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <vector>

#include "geometry.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace pskn {
namespace {

PointCloud random_unit_cloud(std::size_t n, Rng& rng) {
  PointCloud cloud;
  cloud.n = n;
  cloud.points.reserve(3 * n);
  for (std::size_t i = 0; i < 3 * n; ++i)
    cloud.points.push_back(rng.uniform(-1.0, 1.0));
  return normalize_unit_sphere(cloud);
}

double median_ms(const std::function<void()>& work, int reps) {
  std::vector<double> times;
  times.reserve(reps);
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    work();
    const auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double, std::milli>(t1 - t0)
                        .count());
  }
  std::sort(times.begin(), times.end());
  return times[times.size() / 2];
}

void add_row(std::string& out, const std::string& label, double ms,
             std::size_t points) {
  char line[160];
  const double pps = ms > 0 ? 1000.0 * static_cast<double>(points) / ms : 0.0;
  std::snprintf(line, sizeof line, "%s,%.3f,%.0f\n", label.c_str(), ms, pps);
  out += line;
}

}  // namespace

std::string bench_report(const ModelConfig& cfg, std::size_t n_points,
                         std::uint64_t seed) {
  cfg.validate();
  std::string out = "benchmark,median_ms,points_per_sec\n";
  Rng rng(mix_seed(seed, 0xBE));

  for (std::size_t n : {std::size_t(1024), std::size_t(2048),
                        std::size_t(4096), std::size_t(8192)}) {
    const PointCloud cloud = random_unit_cloud(n, rng);
    const std::size_t m = n / 2;
    const double ms = median_ms(
        [&] { farthest_point_sample(cloud, m, lex_smallest_index(cloud)); },
        3);
    char label[64];
    std::snprintf(label, sizeof label, "fps n=%zu m=%zu", n, m);
    add_row(out, label, ms, n);
  }

  const PointCloud cloud = random_unit_cloud(4096, rng);
  const std::vector<std::size_t> picks =
      farthest_point_sample(cloud, 512, lex_smallest_index(cloud));
  std::vector<double> centers;
  centers.reserve(picks.size() * 3);
  for (std::size_t i : picks)
    centers.insert(centers.end(), cloud.point(i), cloud.point(i) + 3);
  const double scan_ms = median_ms(
      [&] { ball_query(cloud, centers, 0.2, 32); }, 3);
  add_row(out, "ball_query_scan n=4096 m=512", scan_ms, 4096);
  const double grid_ms = median_ms(
      [&] { ball_query_grid(cloud, centers, 0.2, 32); }, 3);
  add_row(out, "ball_query_grid n=4096 m=512", grid_ms, 4096);
  const GroupedNeighborhood scan = ball_query(cloud, centers, 0.2, 32);
  const GroupedNeighborhood grid = ball_query_grid(cloud, centers, 0.2, 32);
  const bool grids_match = scan.indices == grid.indices &&
                           scan.valid_counts == grid.valid_counts;

  Parameters params = init_parameters(cfg, seed);
  const PointCloud sample = random_unit_cloud(n_points, rng);
  {
    const GroupedNeighborhood grouped = sample_and_group(
        sample, cfg.stages[0].n_out, cfg.stages[0].radius,
        cfg.stages[0].group_size, lex_smallest_index(sample));
    const double ms = median_ms(
        [&] {
          Graph g(false);
          stage_forward(g, grouped, Tensor(), 0, cfg, params, false);
        },
        3);
    char label[64];
    std::snprintf(label, sizeof label, "stage0_forward n=%zu", n_points);
    add_row(out, label, ms, n_points);
  }
  {
    const double ms = median_ms(
        [&] { forward_logits(sample, cfg, params); }, 3);
    char label[64];
    std::snprintf(label, sizeof label, "full_forward n=%zu", n_points);
    add_row(out, label, ms, n_points);
  }

  out += std::string("grid matches scan: ") + (grids_match ? "yes" : "no") +
         "\n";
  out += "parameters: " + std::to_string(params.parameter_count()) + "\n";
  return out;
}

}  // namespace pskn
