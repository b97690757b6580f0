#include "doctest.h"

#include <cmath>
#include <string>

#include "core/mesh.hpp"
#include "support/synthetic.hpp"

using namespace pskn;

namespace {

const char* kTetra =
    "OFF\n"
    "4 4 0\n"
    "0 0 0\n"
    "1 0 0\n"
    "0 1 0\n"
    "0 0 1\n"
    "3 0 1 2\n"
    "3 0 1 3\n"
    "3 0 2 3\n"
    "3 1 2 3\n";

}  // namespace

TEST_CASE("parses a minimal tetrahedron") {
  Mesh m = parse_off(kTetra);
  CHECK(m.vertex_count() == 4);
  CHECK(m.faces.size() == 4);
  CHECK(m.vertex(1)[0] == 1.0);
  CHECK(m.faces[3] == std::array<std::size_t, 3>{1, 2, 3});
}

TEST_CASE("skips comments and blank lines") {
  const std::string text =
      "# produced by hand\nOFF # format tag\n\n4 4 0\n# vertices\n"
      "0 0 0\n1 0 0\n0 1 0\n0 0 1\n\n3 0 1 2\n3 0 1 3\n3 0 2 3\n3 1 2 3\n";
  Mesh m = parse_off(text);
  CHECK(m.vertex_count() == 4);
  CHECK(m.faces.size() == 4);
}

TEST_CASE("accepts a fused OFF header") {
  const std::string fused =
      "OFF4 4 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n"
      "3 0 1 2\n3 0 1 3\n3 0 2 3\n3 1 2 3\n";
  Mesh a = parse_off(fused);
  Mesh b = parse_off(kTetra);
  CHECK(a.vertices == b.vertices);
  CHECK(a.faces == b.faces);
}

TEST_CASE("fans quad faces into triangles") {
  const std::string quad =
      "OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n";
  Mesh m = parse_off(quad);
  REQUIRE(m.faces.size() == 2);
  CHECK(m.faces[0] == std::array<std::size_t, 3>{0, 1, 2});
  CHECK(m.faces[1] == std::array<std::size_t, 3>{0, 2, 3});
}

TEST_CASE("rejects malformed files with the offending line") {
  auto line_of = [](const char* text) {
    try {
      parse_off(text);
    } catch (const ParseError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  CHECK(line_of("PLY\n3 0 0\n").find("line 1") != std::string::npos);
  CHECK(line_of("OFF\n2 0 0\n0 0 0\n").find("line 3") != std::string::npos);
  CHECK(line_of("OFF\n1 0 0\n0 zero 0\n").find("line 3") != std::string::npos);
  CHECK(line_of("OFF\n1 1 0\n0 0 0\n3 0 0 7\n").find("out of range") !=
        std::string::npos);
  CHECK(line_of("OFF\n1 1 0\n0 0 0\n2 0 0\n").find("at least 3") !=
        std::string::npos);
  const char* trailing = "OFF\n1 0 0\n0 0 0\n42\n";
  CHECK(line_of(trailing).find("trailing") != std::string::npos);
}

TEST_CASE("parse, serialize, parse is a fixed point") {
  const std::string quad =
      "OFF\n# quad box lid\n4 1 0\n0.125 0 0\n1 0 0\n1 1 0\n0 1 0\n"
      "4 0 1 2 3\n";
  Mesh once = parse_off(quad);
  Mesh twice = parse_off(serialize_off(once));
  CHECK(once.vertices == twice.vertices);
  CHECK(once.faces == twice.faces);
}

TEST_CASE("read_off_file reports unreadable paths") {
  CHECK_THROWS_AS(read_off_file("/nonexistent/being.off"), IoError);
}

TEST_CASE("sampled points stay inside a single triangle") {
  Mesh m;
  m.vertices = {0, 0, 0, 1, 0, 0, 0, 1, 0};
  m.faces = {{0, 1, 2}};
  PointCloud cloud = sample_mesh(m, 500, 9);
  for (std::size_t i = 0; i < cloud.n; ++i) {
    const double* p = cloud.point(i);
    CHECK(p[0] >= -1e-12);
    CHECK(p[1] >= -1e-12);
    CHECK(p[0] + p[1] <= 1.0 + 1e-12);
    CHECK(p[2] == 0.0);
  }
}

TEST_CASE("sampling weights triangles by area") {
  Mesh m;
  // Area 1 near the origin, area 3 shifted away.
  m.vertices = {0, 0, 0, 2,  0, 0, 0,  1, 0,
                10, 0, 0, 13, 0, 0, 10, 2, 0};
  m.faces = {{0, 1, 2}, {3, 4, 5}};
  PointCloud cloud = sample_mesh(m, 10000, 4);
  std::size_t on_large = 0;
  for (std::size_t i = 0; i < cloud.n; ++i)
    if (cloud.point(i)[0] >= 5.0) ++on_large;
  const double frac = static_cast<double>(on_large) / 10000.0;
  CHECK(frac > 0.70);
  CHECK(frac < 0.80);
}

TEST_CASE("unit square samples center on the centroid") {
  Mesh m;
  m.vertices = {0, 0, 0, 1, 0, 0, 1, 1, 0, 0, 1, 0};
  m.faces = {{0, 1, 2}, {0, 2, 3}};
  PointCloud cloud = sample_mesh(m, 10000, 21);
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < cloud.n; ++i) {
    mx += cloud.point(i)[0];
    my += cloud.point(i)[1];
  }
  CHECK(std::abs(mx / 10000 - 0.5) < 0.02);
  CHECK(std::abs(my / 10000 - 0.5) < 0.02);
}

TEST_CASE("mesh sampling is deterministic per seed") {
  Mesh m = testing::tetrahedron(2.0);
  CHECK(sample_mesh(m, 64, 7).points == sample_mesh(m, 64, 7).points);
  CHECK(sample_mesh(m, 64, 7).points != sample_mesh(m, 64, 8).points);
}

TEST_CASE("zero-area meshes are rejected") {
  Mesh m;
  m.vertices = {0, 0, 0, 1, 1, 1, 2, 2, 2};
  m.faces = {{0, 1, 2}};  // collinear
  CHECK_THROWS_AS(sample_mesh(m, 10, 0), ValueError);
  CHECK_THROWS_AS(sample_mesh(testing::tetrahedron(1.0), 0, 0), ValueError);
}
