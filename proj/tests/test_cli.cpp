#include <cmath>
#include <cstddef>
#include <fstream>
#include <string>
#include <vector>

#include <doctest.h>

#include "core/dataset.hpp"
#include "support/shapes.hpp"
#include "support/spawn.hpp"
#include "support/synthetic.hpp"

using namespace pskn;
using namespace pskn::testing;

namespace {

Spawn cli(const std::string& args, const std::string& tag) {
  return run_command(std::string(PSKN_CLI_PATH) + " " + args, tag);
}

bool contains(const std::string& text, const std::string& needle) {
  return text.find(needle) != std::string::npos;
}

std::size_t count_lines(const std::string& text) {
  std::size_t n = 0;
  for (char c : text)
    if (c == '\n') ++n;
  return n;
}

// Small 4-class shape tree plus a matching model config, built once.
struct CliFixture {
  std::string root;
  std::string config;

  CliFixture() {
    root = fresh_temp_dir("cli_shapes");
    write_shape_dataset(root, {"box", "sphere", "cylinder", "torus"}, 8, 4,
                        0);
    config = root + "/model.cfg";
    std::ofstream(config) << "stages=16:0.4:8:16,16:16;4:0.9:4:32,32:32\n"
                          << "global_mlp=32\nfc=32\nn_classes=4\n"
                          << "dropout_rate=0\n";
  }
};

const CliFixture& fixture() {
  static CliFixture f;
  return f;
}

double parse_metric(const std::string& out, const std::string& key) {
  const std::size_t at = out.find(key + " ");
  REQUIRE(at != std::string::npos);
  return std::stod(out.substr(at + key.size() + 1));
}

}  // namespace

TEST_CASE("help and parse failures use the documented exit codes") {
  CHECK(cli("--help", "help").code == 0);
  CHECK(cli("frobnicate", "unknown").code == 2);
  CHECK(cli("train --root /nonexistent --out /tmp/x", "badroot").code == 2);
  CHECK(cli("refine --manifest /nonexistent --out /tmp/x", "badmanifest")
            .code == 2);
  const Spawn both = cli("stats --root " + fixture().root + " --index " +
                             fixture().config,
                         "bothsources");
  CHECK(both.code == 2);
}

TEST_CASE("stats reports the class layout") {
  const Spawn r = cli("stats --root " + fixture().root, "stats");
  CHECK(r.code == 0);
  CHECK(contains(r.out, "classes: 4"));
  CHECK(contains(r.out, "instances: 48"));
}

TEST_CASE("refine round trips an index and audits the moves") {
  const std::string dir = fresh_temp_dir("cli_refine");
  DatasetIndex index;
  index.entries = {{"apple", "apple_0001", Split::kTrain, ""},
                   {"apple", "apple_0002", Split::kTrain, ""},
                   {"banana", "banana_0001", Split::kTest, ""}};
  index.rebuild_classes();
  write_index_csv(index, dir + "/index.csv");
  std::ofstream(dir + "/manifest.csv")
      << "class,instance,action,target\n"
      << "apple,apple_0002,move,banana\n";

  const Spawn r = cli("refine --index " + dir + "/index.csv --manifest " +
                          dir + "/manifest.csv --out " + dir + "/out",
                      "refine");
  CHECK(r.code == 0);
  CHECK(contains(r.out, "apple: 2 -> 1"));
  CHECK(contains(r.out, "banana: 1 -> 2"));
  CHECK(contains(r.out, "removed: 0"));
  CHECK(contains(r.out, "touched instances: 3"));

  const DatasetIndex refined = load_index_csv(dir + "/out/refined_index.csv");
  CHECK(refined.entries.size() == 3);
  CHECK(contains(slurp(dir + "/out/audit.csv"), "apple"));

  SUBCASE("an empty manifest audits zeros and succeeds") {
    std::ofstream(dir + "/empty.csv") << "class,instance,action,target\n";
    const Spawn e = cli("refine --index " + dir + "/index.csv --manifest " +
                            dir + "/empty.csv --out " + dir + "/out2",
                        "refine_empty");
    CHECK(e.code == 0);
    CHECK(contains(e.out, "removed: 0"));
    CHECK(contains(e.out, "touched instances: 0"));
  }

  SUBCASE("a manifest naming a missing instance fails with its name") {
    std::ofstream(dir + "/missing.csv")
        << "class,instance,action,target\n"
        << "apple,apple_9999,remove,\n";
    const Spawn m = cli("refine --index " + dir + "/index.csv --manifest " +
                            dir + "/missing.csv --out " + dir + "/out3",
                        "refine_missing");
    CHECK(m.code == 2);
    CHECK(contains(m.err, "apple_9999"));
  }
}

TEST_CASE("train --epochs 1 emits exactly one log row") {
  const std::string out = fresh_temp_dir("cli_train1");
  const Spawn r = cli("train --root " + fixture().root + " --config " +
                          fixture().config + " --out " + out +
                          " --epochs 1 --n-points 64 --seed 5",
                      "train1");
  CHECK(r.code == 0);
  const std::string log = slurp(out + "/train_log.csv");
  CHECK(count_lines(log) == 2);  // header + the one epoch
  CHECK(log.rfind("epoch,train_loss,train_oa,eval_oa,eval_macc\n0,", 0) == 0);
}

TEST_CASE("flags override the config file") {
  const std::string dir = fresh_temp_dir("cli_override");
  std::ofstream(dir + "/train.cfg")
      << slurp(fixture().config) << "epochs=3\nn_points=64\n";
  const Spawn r = cli("train --root " + fixture().root + " --config " + dir +
                          "/train.cfg --out " + dir + "/run --epochs 1",
                      "override");
  CHECK(r.code == 0);
  CHECK(count_lines(slurp(dir + "/run/train_log.csv")) == 2);
}

TEST_CASE("repeated seeded runs produce byte-identical artifacts") {
  const std::string a = fresh_temp_dir("cli_det_a");
  const std::string b = fresh_temp_dir("cli_det_b");
  const std::string args = "train --root " + fixture().root + " --config " +
                           fixture().config +
                           " --epochs 2 --n-points 64 --seed 11 --out ";
  CHECK(cli(args + a, "det_a").code == 0);
  CHECK(cli(args + b, "det_b").code == 0);
  CHECK(slurp(a + "/train_log.csv") == slurp(b + "/train_log.csv"));
  CHECK(slurp(a + "/best.ckpt") == slurp(b + "/best.ckpt"));

  const std::string ea = "eval " + a + "/best.ckpt --root " + fixture().root +
                         " --n-points 64 --seed 11 --out ";
  const Spawn e1 = cli(ea + a + "/eval", "det_eval_a");
  const Spawn e2 = cli(ea + b + "/eval", "det_eval_b");
  CHECK(e1.code == 0);
  CHECK(e2.code == 0);
  CHECK(e1.out == e2.out);
  CHECK(slurp(a + "/eval/confusion.csv") == slurp(b + "/eval/confusion.csv"));
}

TEST_CASE("eval of an untrained model sits at chance level") {
  const std::string dir = fresh_temp_dir("cli_chance");
  write_shape_dataset(dir + "/data", shape_class_names(), 2, 5, 3);
  std::ofstream(dir + "/model.cfg")
      << "stages=16:0.4:8:16,16:16;4:0.9:4:32,32:32\n"
      << "global_mlp=32\nfc=32\nn_classes=10\ndropout_rate=0\n";
  const Spawn r = cli("eval --root " + dir + "/data --config " + dir +
                          "/model.cfg --n-points 64 --seed 17 --out " + dir +
                          "/eval",
                      "chance");
  CHECK(r.code == 0);
  const double oa = parse_metric(r.out, "oa");
  // 50 balanced test samples at p = 1/10: allow three binomial sigmas.
  const double sigma = std::sqrt(0.1 * 0.9 / 50.0);
  CHECK(oa <= 0.1 + 3.0 * sigma);
}

TEST_CASE("classify nails a training sample after an overfit run") {
  const std::string dir = fresh_temp_dir("cli_overfit");
  // Train-only tree, so the best checkpoint tracks train-set memorization.
  write_shape_dataset(dir + "/data", {"box", "sphere", "cylinder", "torus"},
                      8, 0, 0);
  std::ofstream(dir + "/model.cfg")
      << "stages=32:0.4:16:32,32:32;8:0.9:8:64,64:64\n"
      << "global_mlp=64\nfc=64\nn_classes=4\ndropout_rate=0\n"
      << "cosine_decay=false\n";  // short run, keep the rate up
  // Jitter keeps the net from memorizing one exact 128-point draw, so a
  // fresh sampling of the same mesh still lands on its class.
  const Spawn t = cli("train --root " + dir + "/data --config " + dir +
                          "/model.cfg --out " + dir +
                          "/run --epochs 60 --n-points 128 --seed 2"
                          " --augment jitter",
                      "overfit_train");
  REQUIRE(t.code == 0);

  const std::string sample = dir + "/data/torus/train/torus_0001.off";
  const Spawn c = cli("classify " + dir + "/run/best.ckpt " + sample +
                          " --root " + dir + "/data --n-points 128",
                      "overfit_classify");
  CHECK(c.code == 0);
  CHECK(c.out.rfind("1,torus,", 0) == 0);
  CHECK(count_lines(c.out) == 3);

  SUBCASE("a bare point list classifies too") {
    std::ofstream pts(dir + "/points.txt");
    const Mesh torus = torus_mesh(24, 12, 1.0, 0.35);
    const PointCloud cloud = sample_mesh(torus, 128, 9);
    for (std::size_t i = 0; i < cloud.n; ++i)
      pts << cloud.point(i)[0] << ' ' << cloud.point(i)[1] << ' '
          << cloud.point(i)[2] << '\n';
    pts.close();
    const Spawn p = cli("classify " + dir + "/run/best.ckpt " + dir +
                            "/points.txt --root " + dir +
                            "/data --n-points 128",
                        "overfit_points");
    CHECK(p.code == 0);
    CHECK(count_lines(p.out) == 3);
  }
}

TEST_CASE("a truncated checkpoint fails an eval with exit code 1") {
  const std::string dir = fresh_temp_dir("cli_trunc");
  const Spawn t = cli("train --root " + fixture().root + " --config " +
                          fixture().config + " --out " + dir +
                          "/run --epochs 1 --n-points 64 --seed 5",
                      "trunc_train");
  REQUIRE(t.code == 0);
  const std::string whole = slurp(dir + "/run/best.ckpt");
  std::ofstream(dir + "/cut.ckpt", std::ios::binary)
      << whole.substr(0, whole.size() / 2);
  const Spawn e = cli("eval " + dir + "/cut.ckpt --root " + fixture().root +
                          " --n-points 64 --out " + dir + "/eval",
                      "trunc_eval");
  CHECK(e.code == 1);
  CHECK(contains(e.err, "truncated"));
}

TEST_CASE("bench prints the kernel table, equality verdict, and size") {
  const Spawn r = cli("bench --seed 1", "bench");
  CHECK(r.code == 0);
  CHECK(contains(r.out, "benchmark,median_ms,points_per_sec"));
  CHECK(contains(r.out, "fps n=1024"));
  CHECK(contains(r.out, "fps n=8192"));
  CHECK(contains(r.out, "ball_query_scan"));
  CHECK(contains(r.out, "ball_query_grid"));
  CHECK(contains(r.out, "stage0_forward n=1024"));
  CHECK(contains(r.out, "full_forward n=1024"));
  CHECK(contains(r.out, "grid matches scan: yes"));
  CHECK(contains(r.out, "parameters: 1588200"));

  SUBCASE("a point budget below the first stage is a pipeline error") {
    const Spawn bad = cli("bench --n-points 256", "bench_small");
    CHECK(bad.code == 1);
  }
}
