#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "geometry.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace pskn {

enum class SkipMode { kConcatenation, kAddition };

SkipMode parse_skip_mode(const std::string& name);
std::string skip_mode_name(SkipMode mode);

// One sample-and-group stage: center count, grouping ball, shared MLP widths
// applied per neighbor row, and the width of the post-skip reduction.
struct StageConfig {
  std::size_t n_out = 0;
  double radius = 0.0;
  std::size_t group_size = 0;
  std::vector<std::size_t> mlp_widths;
  std::size_t reduce_width = 0;
};

struct ModelConfig {
  std::vector<StageConfig> stages;
  std::vector<std::size_t> global_mlp_widths;  // last entry is |F_global|
  std::vector<std::size_t> fc_widths;
  std::size_t n_classes = 40;
  std::size_t in_feature_width = 0;  // per-point inputs beyond xyz
  SkipMode skip_mode = SkipMode::kConcatenation;
  double dropout_rate = 0.4;

  // Width of the rows entering stage j's shared MLP: the xyz offset plus the
  // features carried in from the previous stage. The per-center skip row has
  // the same width (center xyz plus its incoming feature row).
  std::size_t stage_in_width(std::size_t stage) const;
  void validate() const;  // ConfigError on any bad field
};

ModelConfig default_config();
// Two tiny stages over 64-point clouds, 2 classes, widths <= 16; the
// gradient-check and invariance workhorse.
ModelConfig toy_config();

// Same config under another skip mode. Switching to addition resizes each
// stage's last MLP width to the stage input width so the join is defined.
ModelConfig with_skip_mode(ModelConfig cfg, SkipMode mode);

// Named parameter tensors in creation order, plus the batch-norm running
// stats that ride along as undifferentiated buffers.
struct Parameters {
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::vector<std::pair<std::string, RunningStats>> stats;

  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  RunningStats& stats_at(const std::string& name);
  bool has(const std::string& name) const;
  std::size_t parameter_count() const;  // learnable scalars, stats excluded
};

// Kaiming-style uniform fan-in init for weights, unit batch-norm scales and
// running variances, zero shifts. Norm-backed layers carry no linear bias
// (beta is their shift); plain FC layers get a zero-initialized bias.
// Deterministic in (cfg, seed).
Parameters init_parameters(const ModelConfig& cfg, std::uint64_t seed);

// The sampling and grouping decisions for one cloud, fixed before any tensor
// work. Stage j groups stage j-1's centers (the raw cloud for stage 0).
struct ForwardPlan {
  std::vector<GroupedNeighborhood> stages;
};

// Deterministic plan: FPS starts at the lexicographically smallest point of
// each stage's input.
ForwardPlan plan_forward(const PointCloud& cloud, const ModelConfig& cfg);
// Training-time plan: FPS start drawn per stage, an implicit augmentation.
ForwardPlan plan_forward(const PointCloud& cloud, const ModelConfig& cfg,
                         Rng& rng);

// One stage applied to one cloud's grouping: shared MLP per neighbor row,
// max over each group, skip join of the per-center row (xyz ++ features)
// with the pooled vector, reduction MLP. `features` is the stage input's
// per-point feature block, undefined when the stage consumes bare xyz.
// Returns the per-center features, n_out x reduce_width.
Tensor stage_forward(Graph& g, const GroupedNeighborhood& grouped,
                     const Tensor& features, std::size_t stage,
                     const ModelConfig& cfg, Parameters& params,
                     bool training);

// Shared MLP over xyz ++ features, then a max over all rows; returns the
// 1 x |F_global| pooled feature of one cloud.
Tensor global_feature(Graph& g, const std::vector<double>& xyz,
                      const Tensor& features, const ModelConfig& cfg,
                      Parameters& params, bool training);

// FC stack with ReLU and inverted dropout between hidden layers; the final
// layer emits raw logits, batch x n_classes.
Tensor classify(Graph& g, const Tensor& f_global, const ModelConfig& cfg,
                Parameters& params, bool training, Rng& rng);

// Full network over a batch of clouds with precomputed plans; logits
// batch x n_classes. Batch statistics (batch norm) span all clouds.
Tensor forward_batch(Graph& g, const std::vector<PointCloud>& clouds,
                     const std::vector<ForwardPlan>& plans,
                     const ModelConfig& cfg, Parameters& params,
                     bool training, Rng& rng);

// Deterministic eval-mode forward of a single cloud: lexicographic FPS
// starts, running-stat normalization, no dropout.
std::vector<double> forward_logits(const PointCloud& cloud,
                                   const ModelConfig& cfg, Parameters& params);
int predict(const PointCloud& cloud, const ModelConfig& cfg,
            Parameters& params);

}  // namespace pskn
