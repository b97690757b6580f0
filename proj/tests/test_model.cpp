#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <set>

#include "core/model.hpp"
#include "support/checks.hpp"
#include "support/oracles.hpp"

using namespace pskn;
using testing::fd_gradient;
using testing::random_cloud;
using testing::rel_err;

namespace {

PointCloud normalized_cloud(std::size_t n, Rng& rng) {
  return normalize_unit_sphere(random_cloud(n, rng));
}

// relu(x W + b) for one row, plain loops; batch-norm buffers at their
// initial (0, 1) state are an exact identity in eval mode.
std::vector<double> mlp_row(const std::vector<double>& x, const Tensor& w,
                            const Tensor& b) {
  const std::size_t in = w.dim(0), out = w.dim(1);
  std::vector<double> y(out, 0.0);
  for (std::size_t j = 0; j < out; ++j) {
    double acc = b.data()[j];
    for (std::size_t i = 0; i < in; ++i)
      acc += x[i] * w.data()[i * out + j];
    y[j] = std::max(acc, 0.0);
  }
  return y;
}

}  // namespace

TEST_CASE("skip mode names round trip") {
  CHECK(parse_skip_mode("concat") == SkipMode::kConcatenation);
  CHECK(parse_skip_mode("concatenation") == SkipMode::kConcatenation);
  CHECK(parse_skip_mode("add") == SkipMode::kAddition);
  CHECK(parse_skip_mode(skip_mode_name(SkipMode::kAddition)) ==
        SkipMode::kAddition);
  CHECK(skip_mode_name(SkipMode::kConcatenation) == "concatenation");
  CHECK_THROWS_AS(parse_skip_mode("residual"), ConfigError);
}

TEST_CASE("configuration validation rejects bad fields") {
  CHECK_NOTHROW(default_config().validate());
  CHECK_NOTHROW(toy_config().validate());

  ModelConfig cfg = toy_config();
  cfg.stages[0].mlp_widths = {};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = toy_config();
  cfg.stages[1].n_out = cfg.stages[0].n_out + 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = toy_config();
  cfg.n_classes = 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = toy_config();
  cfg.dropout_rate = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = toy_config();
  cfg.stages[0].radius = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  // Addition joins need the last MLP width to equal the stage input width.
  cfg = toy_config();
  cfg.skip_mode = SkipMode::kAddition;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.stages[0].mlp_widths = {8, 3};
  cfg.stages[1].mlp_widths = {16, 3 + cfg.stages[0].reduce_width};
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("default configuration lands on the published parameter count") {
  Parameters params = init_parameters(default_config(), 1);
  CHECK(params.parameter_count() == 1588200);
  CHECK(params.parameter_count() >= 1470000 * 0.9);
  CHECK(params.parameter_count() <= 1470000 * 1.1);
}

TEST_CASE("initialization is seeded, bounded and canonical") {
  const ModelConfig cfg = toy_config();
  Parameters a = init_parameters(cfg, 7);
  Parameters b = init_parameters(cfg, 7);
  Parameters c = init_parameters(cfg, 8);
  REQUIRE(a.tensors.size() == b.tensors.size());
  std::set<std::string> names;
  bool any_differs = false;
  for (std::size_t i = 0; i < a.tensors.size(); ++i) {
    CHECK(a.tensors[i].first == b.tensors[i].first);
    CHECK(a.tensors[i].second.data() == b.tensors[i].second.data());
    CHECK(names.insert(a.tensors[i].first).second);
    if (a.tensors[i].second.data() != c.tensors[i].second.data())
      any_differs = true;
  }
  CHECK(any_differs);

  const Tensor& w = a.at("stage0.mlp0.w");
  const double bound = std::sqrt(6.0 / 3.0);
  for (double v : w.data()) CHECK(std::abs(v) <= bound);
  for (double v : a.at("stage0.mlp0.beta").data()) CHECK(v == 0.0);
  for (double v : a.at("stage0.mlp0.gamma").data()) CHECK(v == 1.0);
  for (double v : a.stats_at("stage0.mlp0.bn").var) CHECK(v == 1.0);
  for (double v : a.at("fc0.b").data()) CHECK(v == 0.0);
  CHECK(a.has("head.w"));
  CHECK(!a.has("head.gamma"));
  CHECK(!a.has("stage0.mlp0.b"));  // beta is the only shift under a norm
  CHECK_THROWS_AS(a.at("nope.w"), ValueError);
}

TEST_CASE("plans chain stages and ignore input order in eval mode") {
  Rng rng(11);
  PointCloud cloud = normalized_cloud(64, rng);
  const ModelConfig cfg = toy_config();
  ForwardPlan plan = plan_forward(cloud, cfg);
  REQUIRE(plan.stages.size() == 2);
  CHECK(plan.stages[0].m == 16);
  CHECK(plan.stages[1].m == 4);

  // Stage 2 centers are a subset of stage 1 centers.
  for (std::size_t i = 0; i < plan.stages[1].m; ++i) {
    const std::size_t src = plan.stages[1].center_indices[i];
    for (int a = 0; a < 3; ++a)
      CHECK(plan.stages[1].centers[3 * i + a] ==
            plan.stages[0].centers[3 * src + a]);
  }

  PointCloud shuffled = cloud;
  std::vector<std::size_t> order(cloud.n);
  for (std::size_t i = 0; i < cloud.n; ++i) order[i] = i;
  rng.shuffle(order);
  for (std::size_t i = 0; i < cloud.n; ++i)
    for (int a = 0; a < 3; ++a)
      shuffled.points[3 * i + a] = cloud.points[3 * order[i] + a];
  ForwardPlan plan2 = plan_forward(shuffled, cfg);
  CHECK(plan2.stages[0].centers == plan.stages[0].centers);
  CHECK(plan2.stages[1].centers == plan.stages[1].centers);

  PointCloud tiny = normalized_cloud(4, rng);
  CHECK_THROWS_AS(plan_forward(tiny, cfg), ValueError);
}

TEST_CASE("a group of identical neighbors pools to the single-row image") {
  ModelConfig cfg = toy_config();
  Parameters params = init_parameters(cfg, 3);

  GroupedNeighborhood wide;
  wide.m = 2;
  wide.k = 3;
  wide.centers = {0.25, 0, -0.5, 0.5, 0.125, 0};
  wide.grouped_points = {0.25, -0.5, 0.125, 0.25, -0.5, 0.125,
                         0.25, -0.5, 0.125, 0,    0.75, -0.25,
                         0,    0.75, -0.25, 0,    0.75, -0.25};
  wide.valid_counts = {3, 3};

  GroupedNeighborhood narrow = wide;
  narrow.k = 1;
  narrow.grouped_points = {0.25, -0.5, 0.125, 0, 0.75, -0.25};

  Graph g(false);
  Rng rng(0);
  Tensor a = stage_forward(g, wide, Tensor(), 0, cfg, params, false);
  Tensor b = stage_forward(g, narrow, Tensor(), 0, cfg, params, false);
  CHECK(a.data() == b.data());
}

TEST_CASE("within-group neighbor permutations leave stages bit-identical") {
  Rng rng(23);
  PointCloud cloud = normalized_cloud(64, rng);
  const ModelConfig cfg = toy_config();
  ForwardPlan plan = plan_forward(cloud, cfg);
  Parameters params = init_parameters(cfg, 5);

  ForwardPlan scrambled = plan;
  for (GroupedNeighborhood& grp : scrambled.stages) {
    for (std::size_t gi = 0; gi < grp.m; ++gi) {
      std::vector<std::size_t> perm(grp.k);
      for (std::size_t s = 0; s < grp.k; ++s) perm[s] = s;
      rng.shuffle(perm);
      std::vector<std::size_t> idx(grp.k);
      std::vector<double> pts(grp.k * 3);
      for (std::size_t s = 0; s < grp.k; ++s) {
        idx[s] = grp.indices[gi * grp.k + perm[s]];
        for (int a = 0; a < 3; ++a)
          pts[3 * s + a] = grp.grouped_points[(gi * grp.k + perm[s]) * 3 + a];
      }
      std::copy(idx.begin(), idx.end(), grp.indices.begin() + gi * grp.k);
      std::copy(pts.begin(), pts.end(),
                grp.grouped_points.begin() + gi * grp.k * 3);
    }
  }

  Graph g(false);
  Tensor f0 = stage_forward(g, plan.stages[0], Tensor(), 0, cfg, params,
                            false);
  Tensor f0p = stage_forward(g, scrambled.stages[0], Tensor(), 0, cfg, params,
                             false);
  CHECK(f0.data() == f0p.data());

  Tensor f1 = stage_forward(g, plan.stages[1], f0, 1, cfg, params, false);
  Tensor f1p = stage_forward(g, scrambled.stages[1], f0p, 1, cfg, params,
                             false);
  CHECK(f1.data() == f1p.data());
}

TEST_CASE("tiny stage matches a hand-unrolled computation") {
  ModelConfig cfg;
  cfg.stages = {{4, 1.0, 2, {4}, 2}};
  cfg.global_mlp_widths = {4};
  cfg.fc_widths = {};
  cfg.n_classes = 2;
  cfg.dropout_rate = 0.0;
  Parameters params = init_parameters(cfg, 1);

  // Dyadic values keep every product and sum exact regardless of order.
  // With fresh (0, 1) running stats the eval-mode norm is gamma*x + beta,
  // so beta acts as the layer's bias in the hand arithmetic.
  params.at("stage0.mlp0.w").data() = {1, 0, 0, 1, 0, 1, 0, -1, 0, 0, 1, 2};
  params.at("stage0.mlp0.beta").data() = {0.5, -0.5, 0, 1};
  params.at("stage0.reduce.w").data() = {
      1, -1, 2, 0, 0, 1, -1, 2, 1, 1, 0.5, -0.5, 1, 0.25};
  params.at("stage0.reduce.beta").data() = {1, -1};

  GroupedNeighborhood grouped;
  grouped.m = 4;
  grouped.k = 2;
  grouped.centers = {0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1};
  grouped.grouped_points = {0.25,  0.5,  -0.25, 0.5,  0,     0.75,
                            0.25,  -0.5, 0.125, 0,    0,     0,
                            -0.25, 0.25, 0.5,   0.75, -0.75, 0.25,
                            0.5,   0.25, 0.25,  0,    -0.5,  0.5};
  grouped.valid_counts = {2, 2, 2, 2};

  Graph g(false);
  Tensor out = stage_forward(g, grouped, Tensor(), 0, cfg, params, false);
  REQUIRE(out.shape() == Shape{4, 2});

  for (std::size_t gi = 0; gi < 4; ++gi) {
    std::vector<double> pooled(4, -1e300);
    for (std::size_t s = 0; s < 2; ++s) {
      std::vector<double> row(3);
      for (int a = 0; a < 3; ++a)
        row[a] = grouped.grouped_points[(gi * 2 + s) * 3 + a];
      std::vector<double> h =
          mlp_row(row, params.at("stage0.mlp0.w"),
                  params.at("stage0.mlp0.beta"));
      for (std::size_t j = 0; j < 4; ++j) pooled[j] = std::max(pooled[j], h[j]);
    }
    std::vector<double> joined(7);
    for (int a = 0; a < 3; ++a) joined[a] = grouped.centers[gi * 3 + a];
    for (std::size_t j = 0; j < 4; ++j) joined[ 3 + j] = pooled[j];
    std::vector<double> want = mlp_row(joined, params.at("stage0.reduce.w"),
                                       params.at("stage0.reduce.beta"));
    CHECK(out.data()[gi * 2] == want[0]);
    CHECK(out.data()[gi * 2 + 1] == want[1]);
  }
}

TEST_CASE("global feature is a per-row MLP under a max") {
  ModelConfig cfg = toy_config();
  Parameters params = init_parameters(cfg, 9);
  Rng rng(31);

  const std::size_t n = 7, d = cfg.stages.back().reduce_width;
  std::vector<double> xyz(n * 3);
  for (double& v : xyz) v = rng.uniform(-1, 1);
  Tensor features = testing::random_tensor({n, d}, rng, -1, 1, false);

  Graph g(false);
  Tensor pooled = global_feature(g, xyz, features, cfg, params, false);
  const std::size_t width = cfg.global_mlp_widths.back();
  REQUIRE(pooled.shape() == Shape{1, width});

  std::vector<double> want(width, -1e300);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> row(3 + d);
    for (int a = 0; a < 3; ++a) row[a] = xyz[3 * i + a];
    for (std::size_t j = 0; j < d; ++j) row[3 + j] = features.data()[i * d + j];
    std::vector<double> h = row;
    for (std::size_t l = 0; l < cfg.global_mlp_widths.size(); ++l)
      h = mlp_row(h, params.at("global.mlp" + std::to_string(l) + ".w"),
                  params.at("global.mlp" + std::to_string(l) + ".beta"));
    for (std::size_t j = 0; j < width; ++j) want[j] = std::max(want[j], h[j]);
  }
  for (std::size_t j = 0; j < width; ++j)
    CHECK(pooled.data()[j] == doctest::Approx(want[j]).epsilon(1e-12));

  // Duplicating every row changes nothing; one row is its own maximum.
  std::vector<double> xyz2(xyz);
  xyz2.insert(xyz2.end(), xyz.begin(), xyz.end());
  std::vector<double> stacked = features.data();
  stacked.insert(stacked.end(), features.data().begin(),
                 features.data().end());
  Tensor features2 = g.constant({2 * n, d}, std::move(stacked));
  Tensor pooled2 = global_feature(g, xyz2, features2, cfg, params, false);
  CHECK(pooled2.data() == pooled.data());

  std::vector<double> one_xyz(xyz.begin(), xyz.begin() + 3);
  Tensor one_row = g.constant({1, d}, std::vector<double>(
                                           features.data().begin(),
                                           features.data().begin() + d));
  Tensor pooled_one = global_feature(g, one_xyz, one_row, cfg, params, false);
  std::vector<double> h(3 + d);
  for (int a = 0; a < 3; ++a) h[a] = xyz[a];
  for (std::size_t j = 0; j < d; ++j) h[3 + j] = features.data()[j];
  for (std::size_t l = 0; l < cfg.global_mlp_widths.size(); ++l)
    h = mlp_row(h, params.at("global.mlp" + std::to_string(l) + ".w"),
                params.at("global.mlp" + std::to_string(l) + ".beta"));
  for (std::size_t j = 0; j < width; ++j)
    CHECK(pooled_one.data()[j] == doctest::Approx(h[j]).epsilon(1e-12));
}

TEST_CASE("classifier head reduces to its bias under zero weights") {
  ModelConfig cfg = toy_config();
  cfg.n_classes = 3;
  Parameters params = init_parameters(cfg, 13);
  for (double& v : params.at("fc0.w").data()) v = 0.0;
  for (double& v : params.at("head.w").data()) v = 0.0;
  params.at("head.b").data() = {0.25, -0.75, 2.0};

  Graph g(false);
  Rng rng(0);
  Tensor f = testing::random_tensor({2, cfg.global_mlp_widths.back()}, rng,
                                    -1, 1, false);
  Tensor logits = classify(g, f, cfg, params, false, rng);
  REQUIRE(logits.shape() == Shape{2, 3});
  for (std::size_t b = 0; b < 2; ++b) {
    CHECK(logits.data()[b * 3] == 0.25);
    CHECK(logits.data()[b * 3 + 1] == -0.75);
    CHECK(logits.data()[b * 3 + 2] == 2.0);
  }
}

TEST_CASE("zero dropout makes training and eval classifiers agree") {
  ModelConfig cfg = toy_config();
  cfg.dropout_rate = 0.0;
  Parameters params = init_parameters(cfg, 17);
  Graph g(false);
  Rng rng(1);
  Tensor f = testing::random_tensor({3, cfg.global_mlp_widths.back()}, rng,
                                    -1, 1, false);
  Tensor train_logits = classify(g, f, cfg, params, true, rng);
  Tensor eval_logits = classify(g, f, cfg, params, false, rng);
  CHECK(train_logits.data() == eval_logits.data());
}

TEST_CASE("a three-class head matches hand matrix arithmetic") {
  ModelConfig cfg;
  cfg.stages = {{4, 1.0, 2, {4}, 2}};
  cfg.global_mlp_widths = {2};
  cfg.fc_widths = {2};
  cfg.n_classes = 3;
  cfg.dropout_rate = 0.0;
  Parameters params = init_parameters(cfg, 19);
  params.at("fc0.w").data() = {1, -1, 0.5, 2};
  params.at("fc0.b").data() = {0.25, -0.25};
  params.at("head.w").data() = {1, 0, -1, 0, 2, 1};
  params.at("head.b").data() = {0, 0.5, -0.5};

  Graph g(false);
  Rng rng(0);
  Tensor f = g.constant({1, 2}, {0.5, -1.5});
  Tensor logits = classify(g, f, cfg, params, false, rng);
  // fc: relu([0.5*1 + -1.5*0.5 + 0.25, 0.5*-1 + -1.5*2 - 0.25]) = [0, 0]
  // head: [0, 0] W + b = b
  CHECK(logits.data() == std::vector<double>{0, 0.5, -0.5});

  Tensor f2 = g.constant({1, 2}, {1.0, 0.25});
  Tensor logits2 = classify(g, f2, cfg, params, false, rng);
  // fc: relu([1 + 0.125 + 0.25, -1 + 0.5 - 0.25]) = [1.375, 0]
  // head: [1.375, 0, -1.375] + b
  CHECK(logits2.data() == std::vector<double>{1.375, 0.5, -1.875});
}

TEST_CASE("eval forward is deterministic and normalization-shift proof") {
  Rng rng(37);
  PointCloud cloud = normalized_cloud(64, rng);
  const ModelConfig cfg = toy_config();
  Parameters params = init_parameters(cfg, 21);

  std::vector<double> a = forward_logits(cloud, cfg, params);
  std::vector<double> b = forward_logits(cloud, cfg, params);
  REQUIRE(a.size() == 2);
  CHECK(a == b);

  // Re-centering after a shift reproduces the offsets only up to rounding.
  PointCloud shifted = cloud;
  for (std::size_t i = 0; i < shifted.n; ++i) {
    shifted.points[3 * i] += 2.5;
    shifted.points[3 * i + 1] -= 1.25;
    shifted.points[3 * i + 2] += 0.5;
  }
  std::vector<double> c = forward_logits(normalize_unit_sphere(shifted), cfg,
                                         params);
  for (std::size_t j = 0; j < a.size(); ++j)
    CHECK(std::abs(a[j] - c[j]) < 1e-9);

  const int label = predict(cloud, cfg, params);
  CHECK(label == (a[1] > a[0] ? 1 : 0));
}

TEST_CASE("eval forward ignores input point order") {
  Rng rng(41);
  PointCloud cloud = normalized_cloud(96, rng);
  const ModelConfig cfg = toy_config();
  Parameters params = init_parameters(cfg, 43);
  std::vector<double> base = forward_logits(cloud, cfg, params);

  for (int trial = 0; trial < 3; ++trial) {
    std::vector<std::size_t> order(cloud.n);
    for (std::size_t i = 0; i < cloud.n; ++i) order[i] = i;
    rng.shuffle(order);
    PointCloud shuffled = cloud;
    for (std::size_t i = 0; i < cloud.n; ++i)
      for (int a = 0; a < 3; ++a)
        shuffled.points[3 * i + a] = cloud.points[3 * order[i] + a];
    std::vector<double> got = forward_logits(shuffled, cfg, params);
    for (std::size_t j = 0; j < base.size(); ++j)
      CHECK(std::abs(got[j] - base[j]) < 1e-9);
  }
}

TEST_CASE("batched eval equals per-cloud eval") {
  Rng rng(47);
  const ModelConfig cfg = toy_config();
  Parameters params = init_parameters(cfg, 53);

  std::vector<PointCloud> clouds;
  std::vector<ForwardPlan> plans;
  for (int b = 0; b < 3; ++b) {
    clouds.push_back(normalized_cloud(64, rng));
    plans.push_back(plan_forward(clouds.back(), cfg));
  }
  Graph g(false);
  Rng drop(0);
  Tensor logits = forward_batch(g, clouds, plans, cfg, params, false, drop);
  REQUIRE(logits.shape() == Shape{3, 2});
  for (std::size_t b = 0; b < 3; ++b) {
    std::vector<double> solo = forward_logits(clouds[b], cfg, params);
    CHECK(logits.data()[b * 2] == solo[0]);
    CHECK(logits.data()[b * 2 + 1] == solo[1]);
  }
}

TEST_CASE("every toy-network parameter gradient matches finite differences") {
  Rng rng(59);
  ModelConfig cfg;
  cfg.stages = {{8, 0.5, 4, {6, 6}, 6}, {3, 1.0, 3, {8, 8}, 8}};
  cfg.global_mlp_widths = {8};
  cfg.fc_widths = {8};
  cfg.n_classes = 2;
  cfg.dropout_rate = 0.0;
  Parameters params = init_parameters(cfg, 61);

  std::vector<PointCloud> clouds = {normalized_cloud(24, rng),
                                    normalized_cloud(24, rng)};
  std::vector<ForwardPlan> plans = {plan_forward(clouds[0], cfg),
                                    plan_forward(clouds[1], cfg)};
  const std::vector<int> labels = {0, 1};

  auto loss_value = [&]() {
    Graph g(false);
    Rng drop(0);
    Tensor logits = forward_batch(g, clouds, plans, cfg, params, true, drop);
    return g.softmax_cross_entropy(logits, labels).item();
  };

  Graph g;
  Rng drop(0);
  Tensor logits = forward_batch(g, clouds, plans, cfg, params, true, drop);
  Tensor loss = g.softmax_cross_entropy(logits, labels);
  g.backward(loss);

  for (auto& [name, param] : params.tensors) {
    const std::vector<double> fd = fd_gradient(loss_value, param, 1e-4);
    INFO("parameter ", name);
    CHECK(rel_err(param.grad(), fd) < 1e-3);
  }
}

TEST_CASE("addition skip mode runs end to end") {
  Rng rng(67);
  ModelConfig cfg = toy_config();
  cfg.skip_mode = SkipMode::kAddition;
  cfg.stages[0].mlp_widths = {8, 3};
  cfg.stages[1].mlp_widths = {16, 3 + cfg.stages[0].reduce_width};
  cfg.validate();
  Parameters params = init_parameters(cfg, 71);

  PointCloud cloud = normalized_cloud(64, rng);
  std::vector<double> logits = forward_logits(cloud, cfg, params);
  REQUIRE(logits.size() == 2);
  for (double v : logits) CHECK(std::isfinite(v));
}
