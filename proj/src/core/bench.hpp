#pragma once

#include <cstdint>
#include <string>

#include "model.hpp"

namespace pskn {

// Microbenchmarks FPS at growing sizes, ball query over both the scan and
// grid paths, one stage forward and the full eval forward. Returns a CSV
// timing table (median wall time, points per second) followed by the
// grid-equals-scan verdict and the parameter count.
std::string bench_report(const ModelConfig& cfg, std::size_t n_points,
                         std::uint64_t seed);

}  // namespace pskn
