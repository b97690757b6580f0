#include "mesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "rng.hpp"

namespace pskn {

namespace {

struct Token {
  std::string text;
  std::size_t line;
};

std::vector<Token> tokenize(const std::string& text) {
  std::vector<Token> toks;
  std::size_t line = 1;
  std::string cur;
  bool in_comment = false;
  auto flush = [&]() {
    if (!cur.empty()) {
      toks.push_back({cur, line});
      cur.clear();
    }
  };
  for (char ch : text) {
    if (ch == '\n') {
      flush();
      in_comment = false;
      ++line;
    } else if (in_comment) {
    } else if (ch == '#') {
      flush();
      in_comment = true;
    } else if (ch == ' ' || ch == '\t' || ch == '\r' || ch == '\v' ||
               ch == '\f') {
      flush();
    } else {
      cur += ch;
    }
  }
  flush();
  return toks;
}

class TokenReader {
 public:
  explicit TokenReader(std::vector<Token> toks) : toks_(std::move(toks)) {}

  bool done() const { return pos_ >= toks_.size(); }
  std::size_t line() const {
    return done() ? (toks_.empty() ? 1 : toks_.back().line) : toks_[pos_].line;
  }

  const Token& next(const char* what) {
    if (done())
      throw ParseError("unexpected end of file while reading " +
                           std::string(what),
                       line());
    return toks_[pos_++];
  }

  std::size_t read_count(const char* what) {
    const Token& t = next(what);
    return parse_count(t.text, what, t.line);
  }

  double read_double(const char* what) {
    const Token& t = next(what);
    try {
      std::size_t used = 0;
      const double v = std::stod(t.text, &used);
      if (used != t.text.size()) throw std::invalid_argument("");
      return v;
    } catch (const std::exception&) {
      throw ParseError("expected a number for " + std::string(what) +
                           ", got '" + t.text + "'",
                       t.line);
    }
  }

  static std::size_t parse_count(const std::string& s, const char* what,
                                 std::size_t line) {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
      throw ParseError("expected a non-negative integer for " +
                           std::string(what) + ", got '" + s + "'",
                       line);
    try {
      return std::stoull(s);
    } catch (const std::exception&) {
      throw ParseError("count out of range for " + std::string(what) +
                           ": '" + s + "'",
                       line);
    }
  }

 private:
  std::vector<Token> toks_;
  std::size_t pos_ = 0;
};

}  // namespace

Mesh parse_off(const std::string& text) {
  TokenReader r(tokenize(text));
  const Token& head = r.next("OFF header");
  if (head.text.rfind("OFF", 0) != 0)
    throw ParseError("expected OFF header, got '" + head.text + "'",
                     head.line);

  std::size_t v_count;
  if (head.text.size() > 3) {
    // Fused header: the vertex count is glued onto the OFF token.
    v_count = TokenReader::parse_count(head.text.substr(3), "vertex count",
                                       head.line);
  } else {
    v_count = r.read_count("vertex count");
  }
  const std::size_t f_count = r.read_count("face count");
  r.read_count("edge count");  // present in the header, never used

  Mesh mesh;
  mesh.vertices.resize(v_count * 3);
  for (std::size_t i = 0; i < v_count * 3; ++i)
    mesh.vertices[i] = r.read_double("vertex coordinate");

  mesh.faces.reserve(f_count);
  for (std::size_t f = 0; f < f_count; ++f) {
    const std::size_t arity_line = r.line();
    const std::size_t arity = r.read_count("face vertex count");
    if (arity < 3)
      throw ParseError("face needs at least 3 vertices, got " +
                           std::to_string(arity),
                       arity_line);
    std::vector<std::size_t> poly(arity);
    for (std::size_t s = 0; s < arity; ++s) {
      const Token& t = r.next("face vertex index");
      poly[s] = TokenReader::parse_count(t.text, "face vertex index", t.line);
      if (poly[s] >= v_count)
        throw ParseError("vertex index " + std::to_string(poly[s]) +
                             " out of range for " + std::to_string(v_count) +
                             " vertices",
                         t.line);
    }
    for (std::size_t s = 1; s + 1 < arity; ++s)
      mesh.faces.push_back({poly[0], poly[s], poly[s + 1]});
  }

  if (!r.done())
    throw ParseError("trailing content after the last face", r.line());
  return mesh;
}

std::string serialize_off(const Mesh& mesh) {
  std::ostringstream out;
  out << "OFF\n" << mesh.vertex_count() << ' ' << mesh.faces.size() << " 0\n";
  char buf[96];
  for (std::size_t i = 0; i < mesh.vertex_count(); ++i) {
    const double* v = mesh.vertex(i);
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g\n", v[0], v[1], v[2]);
    out << buf;
  }
  for (const auto& f : mesh.faces)
    out << "3 " << f[0] << ' ' << f[1] << ' ' << f[2] << '\n';
  return out.str();
}

Mesh read_off_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open mesh file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_off(buf.str());
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

PointCloud sample_mesh(const Mesh& mesh, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw ValueError("sample_mesh: need at least one point");
  std::vector<double> cumulative(mesh.faces.size());
  double total = 0.0;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const double* a = mesh.vertex(mesh.faces[f][0]);
    const double* b = mesh.vertex(mesh.faces[f][1]);
    const double* c = mesh.vertex(mesh.faces[f][2]);
    const double ux = b[0] - a[0], uy = b[1] - a[1], uz = b[2] - a[2];
    const double vx = c[0] - a[0], vy = c[1] - a[1], vz = c[2] - a[2];
    const double cx = uy * vz - uz * vy;
    const double cy = uz * vx - ux * vz;
    const double cz = ux * vy - uy * vx;
    total += 0.5 * std::sqrt(cx * cx + cy * cy + cz * cz);
    cumulative[f] = total;
  }
  if (!(total > 0.0))
    throw ValueError("sample_mesh: mesh has zero surface area");

  Rng rng(seed);
  PointCloud cloud;
  cloud.n = n;
  cloud.points.resize(n * 3);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform() * total;
    const std::size_t f = static_cast<std::size_t>(
        std::upper_bound(cumulative.begin(), cumulative.end(), u) -
        cumulative.begin());
    const auto& face = mesh.faces[std::min(f, mesh.faces.size() - 1)];
    const double* a = mesh.vertex(face[0]);
    const double* b = mesh.vertex(face[1]);
    const double* c = mesh.vertex(face[2]);
    double s = rng.uniform(), t = rng.uniform();
    if (s + t > 1.0) {  // reflect into the lower triangle
      s = 1.0 - s;
      t = 1.0 - t;
    }
    double* p = cloud.points.data() + 3 * i;
    for (int axis = 0; axis < 3; ++axis)
      p[axis] = a[axis] + s * (b[axis] - a[axis]) + t * (c[axis] - a[axis]);
  }
  return cloud;
}

}  // namespace pskn
