#include "model.hpp"

#include <algorithm>
#include <cmath>

namespace pskn {

namespace {

// linear -> batch norm -> relu, parameters under `prefix`. The linear has no
// bias: the norm re-centers every column, so beta is the only shift that
// survives and a bias here would sit in the loss's null space.
Tensor linear_bn_relu(Graph& g, const Tensor& x, const std::string& prefix,
                      Parameters& params, bool training) {
  Tensor h = g.matmul(x, params.at(prefix + ".w"));
  h = g.batch_norm(h, params.at(prefix + ".gamma"),
                   params.at(prefix + ".beta"),
                   params.stats_at(prefix + ".bn"), training);
  return g.relu(h);
}

// Stacks each cloud's per-group center-relative offsets into one constant
// row block; gathers the matching feature rows from `prev` when the stage
// carries features. `prev_offsets[b]` locates cloud b's rows inside `prev`.
Tensor assemble_grouped(Graph& g,
                        const std::vector<const GroupedNeighborhood*>& groups,
                        const Tensor& prev,
                        const std::vector<std::size_t>& prev_offsets) {
  std::size_t rows = 0;
  for (const auto* grp : groups) rows += grp->m * grp->k;
  std::vector<double> xyz;
  xyz.reserve(rows * 3);
  for (const auto* grp : groups)
    xyz.insert(xyz.end(), grp->grouped_points.begin(),
               grp->grouped_points.end());
  Tensor rel = g.constant({rows, 3}, std::move(xyz));
  if (!prev.defined()) return rel;

  std::vector<std::size_t> flat;
  flat.reserve(rows);
  for (std::size_t b = 0; b < groups.size(); ++b)
    for (std::size_t idx : groups[b]->indices)
      flat.push_back(prev_offsets[b] + idx);
  return g.concat_last(rel, g.gather_rows(prev, std::move(flat)));
}

// Per-center skip rows: the center's absolute xyz plus its incoming feature
// row, mirroring the width of the grouped block.
Tensor assemble_skip(Graph& g,
                     const std::vector<const GroupedNeighborhood*>& groups,
                     const Tensor& prev,
                     const std::vector<std::size_t>& prev_offsets) {
  std::size_t rows = 0;
  for (const auto* grp : groups) rows += grp->m;
  std::vector<double> xyz;
  xyz.reserve(rows * 3);
  for (const auto* grp : groups)
    xyz.insert(xyz.end(), grp->centers.begin(), grp->centers.end());
  Tensor centers = g.constant({rows, 3}, std::move(xyz));
  if (!prev.defined()) return centers;

  std::vector<std::size_t> flat;
  flat.reserve(rows);
  for (std::size_t b = 0; b < groups.size(); ++b) {
    if (groups[b]->center_indices.size() != groups[b]->m)
      throw ShapeError("stage grouping lacks center indices for the skip row");
    for (std::size_t idx : groups[b]->center_indices)
      flat.push_back(prev_offsets[b] + idx);
  }
  return g.concat_last(centers, g.gather_rows(prev, std::move(flat)));
}

// Shared MLP over grouped rows, max over each k-block, skip join, reduce.
Tensor stage_apply(Graph& g, const Tensor& grouped_rows,
                   const Tensor& skip_rows, std::size_t group_size,
                   std::size_t stage, const ModelConfig& cfg,
                   Parameters& params, bool training) {
  const StageConfig& sc = cfg.stages[stage];
  const std::string prefix = "stage" + std::to_string(stage);
  Tensor h = grouped_rows;
  for (std::size_t i = 0; i < sc.mlp_widths.size(); ++i)
    h = linear_bn_relu(g, h, prefix + ".mlp" + std::to_string(i), params,
                       training);
  const std::size_t d = h.dim(1);
  const std::size_t n_groups = h.dim(0) / group_size;
  Tensor pooled =
      g.max_over_axis(g.reshape(h, {n_groups, group_size, d}), 1);
  Tensor joined = cfg.skip_mode == SkipMode::kConcatenation
                      ? g.concat_last(skip_rows, pooled)
                      : g.add(pooled, skip_rows);
  return linear_bn_relu(g, joined, prefix + ".reduce", params, training);
}

Tensor global_apply(Graph& g, const Tensor& xyz_rows, const Tensor& features,
                    std::size_t batch, const ModelConfig& cfg,
                    Parameters& params, bool training) {
  Tensor h = g.concat_last(xyz_rows, features);
  for (std::size_t i = 0; i < cfg.global_mlp_widths.size(); ++i)
    h = linear_bn_relu(g, h, "global.mlp" + std::to_string(i), params,
                       training);
  const std::size_t width = h.dim(1);
  const std::size_t rows_per_cloud = h.dim(0) / batch;
  return g.max_over_axis(g.reshape(h, {batch, rows_per_cloud, width}), 1);
}

ForwardPlan plan_with_starts(const PointCloud& cloud, const ModelConfig& cfg,
                             Rng* rng) {
  cfg.validate();
  ForwardPlan plan;
  PointCloud current;
  current.points = cloud.points;
  current.n = cloud.n;
  for (const StageConfig& sc : cfg.stages) {
    const std::size_t start =
        rng ? rng->below(current.n) : lex_smallest_index(current);
    GroupedNeighborhood grouped = sample_and_group(
        current, sc.n_out, sc.radius, sc.group_size, start);
    current.points = grouped.centers;
    current.n = grouped.m;
    plan.stages.push_back(std::move(grouped));
  }
  return plan;
}

std::size_t check_plan(const std::vector<ForwardPlan>& plans,
                       const ModelConfig& cfg, std::size_t stage) {
  const StageConfig& sc = cfg.stages[stage];
  for (const ForwardPlan& plan : plans) {
    if (plan.stages.size() != cfg.stages.size())
      throw ShapeError("forward plan has " +
                       std::to_string(plan.stages.size()) + " stages, model " +
                       std::to_string(cfg.stages.size()));
    const GroupedNeighborhood& grp = plan.stages[stage];
    if (grp.m != sc.n_out || grp.k != sc.group_size)
      throw ShapeError("forward plan stage " + std::to_string(stage) +
                       " grouping does not match the model configuration");
  }
  return sc.group_size;
}

}  // namespace

SkipMode parse_skip_mode(const std::string& name) {
  if (name == "concat" || name == "concatenation")
    return SkipMode::kConcatenation;
  if (name == "add" || name == "addition") return SkipMode::kAddition;
  throw ConfigError("unknown skip mode '" + name +
                    "' (expected concat or add)");
}

std::string skip_mode_name(SkipMode mode) {
  return mode == SkipMode::kConcatenation ? "concatenation" : "addition";
}

std::size_t ModelConfig::stage_in_width(std::size_t stage) const {
  if (stage == 0) return 3 + in_feature_width;
  return 3 + stages[stage - 1].reduce_width;
}

void ModelConfig::validate() const {
  if (stages.empty()) throw ConfigError("model needs at least one stage");
  for (std::size_t j = 0; j < stages.size(); ++j) {
    const StageConfig& sc = stages[j];
    const std::string where = "stage " + std::to_string(j) + ": ";
    if (sc.n_out < 1) throw ConfigError(where + "n_out must be positive");
    if (!(sc.radius > 0.0))
      throw ConfigError(where + "radius must be positive");
    if (sc.group_size < 1)
      throw ConfigError(where + "group_size must be positive");
    if (sc.mlp_widths.empty())
      throw ConfigError(where + "mlp_widths must be non-empty");
    for (std::size_t w : sc.mlp_widths)
      if (w < 1) throw ConfigError(where + "mlp widths must be positive");
    if (sc.reduce_width < 1)
      throw ConfigError(where + "reduce_width must be positive");
    if (j > 0 && sc.n_out > stages[j - 1].n_out)
      throw ConfigError(where + "n_out exceeds the previous stage's output");
    if (skip_mode == SkipMode::kAddition &&
        sc.mlp_widths.back() != stage_in_width(j))
      throw ConfigError(where + "addition skip join needs the last MLP " +
                        "width to match the stage input width (" +
                        std::to_string(sc.mlp_widths.back()) + " vs " +
                        std::to_string(stage_in_width(j)) + ")");
  }
  if (global_mlp_widths.empty())
    throw ConfigError("global_mlp_widths must be non-empty");
  for (std::size_t w : global_mlp_widths)
    if (w < 1) throw ConfigError("global MLP widths must be positive");
  for (std::size_t w : fc_widths)
    if (w < 1) throw ConfigError("fc widths must be positive");
  if (n_classes < 2) throw ConfigError("n_classes must be at least 2");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
    throw ConfigError("dropout_rate must lie in [0, 1)");
}

ModelConfig default_config() {
  ModelConfig cfg;
  cfg.stages = {{512, 0.2, 32, {64, 64, 128}, 128},
                {128, 0.4, 64, {128, 128, 256}, 256}};
  cfg.global_mlp_widths = {256, 512, 1024};
  cfg.fc_widths = {512, 256};
  cfg.n_classes = 40;
  cfg.skip_mode = SkipMode::kConcatenation;
  cfg.dropout_rate = 0.4;
  return cfg;
}

ModelConfig toy_config() {
  ModelConfig cfg;
  cfg.stages = {{16, 0.4, 8, {8, 8}, 8}, {4, 0.9, 4, {16, 16}, 16}};
  cfg.global_mlp_widths = {16};
  cfg.fc_widths = {16};
  cfg.n_classes = 2;
  cfg.skip_mode = SkipMode::kConcatenation;
  cfg.dropout_rate = 0.0;
  return cfg;
}

ModelConfig with_skip_mode(ModelConfig cfg, SkipMode mode) {
  cfg.skip_mode = mode;
  if (mode == SkipMode::kAddition)
    for (std::size_t j = 0; j < cfg.stages.size(); ++j)
      if (!cfg.stages[j].mlp_widths.empty())
        cfg.stages[j].mlp_widths.back() = cfg.stage_in_width(j);
  return cfg;
}

Tensor& Parameters::at(const std::string& name) {
  for (auto& [n, t] : tensors)
    if (n == name) return t;
  throw ValueError("no parameter named '" + name + "'");
}

const Tensor& Parameters::at(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw ValueError("no parameter named '" + name + "'");
}

RunningStats& Parameters::stats_at(const std::string& name) {
  for (auto& [n, s] : stats)
    if (n == name) return s;
  throw ValueError("no running stats named '" + name + "'");
}

bool Parameters::has(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return true;
  return false;
}

std::size_t Parameters::parameter_count() const {
  std::size_t count = 0;
  for (const auto& [n, t] : tensors) count += t.numel();
  return count;
}

namespace {

void add_linear(Parameters& params, Rng& rng, const std::string& prefix,
                std::size_t in, std::size_t out, bool with_bn) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in));
  std::vector<double> w(in * out);
  for (double& v : w) v = rng.uniform(-bound, bound);
  params.tensors.emplace_back(prefix + ".w",
                              Tensor({in, out}, std::move(w), true));
  if (with_bn) {
    params.tensors.emplace_back(prefix + ".gamma",
                                Tensor::full({out}, 1.0, true));
    params.tensors.emplace_back(prefix + ".beta", Tensor::zeros({out}, true));
    params.stats.emplace_back(
        prefix + ".bn",
        RunningStats{std::vector<double>(out, 0.0),
                     std::vector<double>(out, 1.0)});
  } else {
    params.tensors.emplace_back(prefix + ".b", Tensor::zeros({out}, true));
  }
}

}  // namespace

Parameters init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Parameters params;
  Rng rng(seed);
  for (std::size_t j = 0; j < cfg.stages.size(); ++j) {
    const StageConfig& sc = cfg.stages[j];
    const std::string prefix = "stage" + std::to_string(j);
    std::size_t in = cfg.stage_in_width(j);
    for (std::size_t i = 0; i < sc.mlp_widths.size(); ++i) {
      add_linear(params, rng, prefix + ".mlp" + std::to_string(i), in,
                 sc.mlp_widths[i], true);
      in = sc.mlp_widths[i];
    }
    const std::size_t join =
        cfg.skip_mode == SkipMode::kConcatenation
            ? cfg.stage_in_width(j) + sc.mlp_widths.back()
            : sc.mlp_widths.back();
    add_linear(params, rng, prefix + ".reduce", join, sc.reduce_width, true);
  }
  std::size_t in = 3 + cfg.stages.back().reduce_width;
  for (std::size_t i = 0; i < cfg.global_mlp_widths.size(); ++i) {
    add_linear(params, rng, "global.mlp" + std::to_string(i), in,
               cfg.global_mlp_widths[i], true);
    in = cfg.global_mlp_widths[i];
  }
  for (std::size_t i = 0; i < cfg.fc_widths.size(); ++i) {
    add_linear(params, rng, "fc" + std::to_string(i), in, cfg.fc_widths[i],
               false);
    in = cfg.fc_widths[i];
  }
  add_linear(params, rng, "head", in, cfg.n_classes, false);
  return params;
}

ForwardPlan plan_forward(const PointCloud& cloud, const ModelConfig& cfg) {
  return plan_with_starts(cloud, cfg, nullptr);
}

ForwardPlan plan_forward(const PointCloud& cloud, const ModelConfig& cfg,
                         Rng& rng) {
  return plan_with_starts(cloud, cfg, &rng);
}

Tensor stage_forward(Graph& g, const GroupedNeighborhood& grouped,
                     const Tensor& features, std::size_t stage,
                     const ModelConfig& cfg, Parameters& params,
                     bool training) {
  if (stage >= cfg.stages.size())
    throw ValueError("stage index " + std::to_string(stage) +
                     " out of range");
  const std::size_t want = cfg.stage_in_width(stage);
  const std::size_t have = 3 + (features.defined() ? features.dim(1) : 0);
  if (want != have)
    throw ShapeError("stage " + std::to_string(stage) + " expects input "
                     "width " + std::to_string(want) + ", got " +
                     std::to_string(have));
  const std::vector<const GroupedNeighborhood*> groups = {&grouped};
  const std::vector<std::size_t> offsets = {0};
  Tensor rows = assemble_grouped(g, groups, features, offsets);
  Tensor skip = assemble_skip(g, groups, features, offsets);
  return stage_apply(g, rows, skip, grouped.k, stage, cfg, params, training);
}

Tensor global_feature(Graph& g, const std::vector<double>& xyz,
                      const Tensor& features, const ModelConfig& cfg,
                      Parameters& params, bool training) {
  if (!features.defined() || features.rank() != 2)
    throw ShapeError("global_feature: features must be a row matrix");
  const std::size_t n = features.dim(0);
  if (xyz.size() != n * 3)
    throw ShapeError("global_feature: xyz rows (" +
                     std::to_string(xyz.size() / 3) +
                     ") do not match feature rows (" + std::to_string(n) +
                     ")");
  Tensor coords = g.constant({n, 3}, xyz);
  return global_apply(g, coords, features, 1, cfg, params, training);
}

Tensor classify(Graph& g, const Tensor& f_global, const ModelConfig& cfg,
                Parameters& params, bool training, Rng& rng) {
  Tensor h = f_global;
  for (std::size_t i = 0; i < cfg.fc_widths.size(); ++i) {
    const std::string prefix = "fc" + std::to_string(i);
    h = g.relu(g.add(g.matmul(h, params.at(prefix + ".w")),
                     params.at(prefix + ".b")));
    h = g.dropout(h, cfg.dropout_rate, training, rng);
  }
  return g.add(g.matmul(h, params.at("head.w")), params.at("head.b"));
}

Tensor forward_batch(Graph& g, const std::vector<PointCloud>& clouds,
                     const std::vector<ForwardPlan>& plans,
                     const ModelConfig& cfg, Parameters& params,
                     bool training, Rng& rng) {
  cfg.validate();
  if (clouds.empty()) throw ValueError("forward_batch: empty batch");
  if (clouds.size() != plans.size())
    throw ShapeError("forward_batch: " + std::to_string(clouds.size()) +
                     " clouds but " + std::to_string(plans.size()) +
                     " plans");
  const std::size_t batch = clouds.size();

  Tensor features;  // stage input rows across the batch
  std::vector<std::size_t> offsets(batch, 0);
  if (cfg.in_feature_width > 0) {
    std::vector<double> rows;
    std::size_t total = 0;
    for (std::size_t b = 0; b < batch; ++b) {
      if (clouds[b].feature_width != cfg.in_feature_width)
        throw ShapeError("forward_batch: cloud feature width " +
                         std::to_string(clouds[b].feature_width) +
                         " does not match the model's " +
                         std::to_string(cfg.in_feature_width));
      offsets[b] = total;
      total += clouds[b].n;
      rows.insert(rows.end(), clouds[b].features.begin(),
                  clouds[b].features.end());
    }
    features = g.constant({total, cfg.in_feature_width}, std::move(rows));
  }

  for (std::size_t j = 0; j < cfg.stages.size(); ++j) {
    const std::size_t group_size = check_plan(plans, cfg, j);
    std::vector<const GroupedNeighborhood*> groups;
    groups.reserve(batch);
    for (const ForwardPlan& plan : plans) groups.push_back(&plan.stages[j]);
    Tensor rows = assemble_grouped(g, groups, features, offsets);
    Tensor skip = assemble_skip(g, groups, features, offsets);
    features = stage_apply(g, rows, skip, group_size, j, cfg, params,
                           training);
    for (std::size_t b = 0; b < batch; ++b)
      offsets[b] = b * cfg.stages[j].n_out;
  }

  std::vector<double> xyz;
  xyz.reserve(batch * cfg.stages.back().n_out * 3);
  for (const ForwardPlan& plan : plans)
    xyz.insert(xyz.end(), plan.stages.back().centers.begin(),
               plan.stages.back().centers.end());
  Tensor coords = g.constant({batch * cfg.stages.back().n_out, 3},
                             std::move(xyz));
  Tensor pooled =
      global_apply(g, coords, features, batch, cfg, params, training);
  return classify(g, pooled, cfg, params, training, rng);
}

std::vector<double> forward_logits(const PointCloud& cloud,
                                   const ModelConfig& cfg,
                                   Parameters& params) {
  Graph g(false);
  Rng rng(0);  // dropout is inert in eval mode
  Tensor logits = forward_batch(g, {cloud}, {plan_forward(cloud, cfg)}, cfg,
                                params, false, rng);
  return logits.data();
}

int predict(const PointCloud& cloud, const ModelConfig& cfg,
            Parameters& params) {
  const std::vector<double> logits = forward_logits(cloud, cfg, params);
  return static_cast<int>(std::max_element(logits.begin(), logits.end()) -
                          logits.begin());
}

}  // namespace pskn
