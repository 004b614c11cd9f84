#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

#include "doctest.h"

#include "craniofit/error.hpp"
#include "craniofit/geometry.hpp"
#include "craniofit/mesh_io.hpp"
#include "craniofit/rotation.hpp"

using namespace craniofit;

namespace {

mesh unit_square() {
  mesh m;
  m.vertices  = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}};
  m.triangles = {{0, 1, 2}, {0, 2, 3}};
  return m;
}

// Large planar grid in z = 0 centred on the origin.
mesh plane_grid(double half, int cells) {
  mesh m;
  for (int j = 0; j <= cells; ++j)
    for (int i = 0; i <= cells; ++i)
      m.vertices.emplace_back(-half + 2 * half * i / cells, -half + 2 * half * j / cells, 0.0);
  for (int j = 0; j < cells; ++j)
    for (int i = 0; i < cells; ++i) {
      const int a = j * (cells + 1) + i;
      m.triangles.push_back({a, a + 1, a + cells + 2});
      m.triangles.push_back({a, a + cells + 2, a + cells + 1});
    }
  return m;
}

mesh scaled(mesh m, double s) {
  for (auto& v : m.vertices) v *= s;
  return m;
}

// Straightforward incident-triangle summation, independent of the library.
std::vector<vec3> oracle_normals(const mesh& m) {
  std::vector<vec3> out(m.vertices.size(), vec3::Zero());
  for (std::size_t v = 0; v < m.vertices.size(); ++v) {
    vec3 sum = vec3::Zero();
    for (const auto& t : m.triangles) {
      if (t[0] != static_cast<int>(v) && t[1] != static_cast<int>(v) && t[2] != static_cast<int>(v)) continue;
      const vec3 e1 = m.vertices[t[1]] - m.vertices[t[0]];
      const vec3 e2 = m.vertices[t[2]] - m.vertices[t[0]];
      sum += e1.cross(e2);
    }
    out[v] = sum.normalized();
  }
  return out;
}

closest_point_index::hit brute_closest(const mesh& m, const vec3& q) {
  closest_point_index::hit best;
  best.distance = 1e300;
  for (std::size_t t = 0; t < m.triangles.size(); ++t) {
    const auto& f = m.triangles[t];
    const vec3  c = closest_point_on_triangle(q, m.vertices[f[0]], m.vertices[f[1]], m.vertices[f[2]]);
    const double d = (c - q).norm();
    if (d < best.distance) best = {c, static_cast<int>(t), d};
  }
  return best;
}

}  // namespace

TEST_CASE("vertex normals of a planar square are consistent") {
  const auto r = vertex_normals(unit_square());
  CHECK(r.undefined.empty());
  for (const auto& n : r.normals) CHECK((n - vec3(0, 0, 1)).norm() < 1e-15);
}

TEST_CASE("tetrahedron vertex normals point away from the centroid") {
  mesh m;
  m.vertices  = {{1, 1, 1}, {1, -1, -1}, {-1, 1, -1}, {-1, -1, 1}};
  m.triangles = {{0, 1, 2}, {0, 3, 1}, {0, 2, 3}, {1, 3, 2}};
  const auto r = vertex_normals(m);
  for (int v = 0; v < 4; ++v) CHECK((r.normals[v] - m.vertices[v].normalized()).norm() < 1e-12);
}

TEST_CASE("vertex normals match brute-force incident-triangle sums") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.8, 1.2);
  mesh m = icosphere(2);
  for (auto& v : m.vertices) v *= u(rng);
  const auto r      = vertex_normals(m);
  const auto oracle = oracle_normals(m);
  for (std::size_t v = 0; v < oracle.size(); ++v) {
    CHECK((r.normals[v] - oracle[v]).norm() < 1e-12);
    CHECK(std::abs(r.normals[v].norm() - 1.0) < 1e-12);
  }
}

TEST_CASE("degenerate vertices are reported as undefined") {
  mesh m;
  m.vertices  = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {5, 5, 5}};
  m.triangles = {{0, 1, 2}};
  const auto r = vertex_normals(m);
  REQUIRE(r.undefined.size() == 4);
  CHECK(r.normals[0].norm() == 0.0);
}

TEST_CASE("rotating a mesh rotates its normals") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 10; ++trial) {
    mesh m = icosphere(2);
    for (auto& v : m.vertices) v += 0.05 * vec3(g(rng), g(rng), g(rng));
    const mat3 rot = rodrigues(vec3(g(rng), g(rng), g(rng)));
    mesh       r   = m;
    for (auto& v : r.vertices) v = rot * v;
    const auto a = vertex_normals(m);
    const auto b = vertex_normals(r);
    for (std::size_t v = 0; v < m.vertices.size(); ++v) CHECK((rot * a.normals[v] - b.normals[v]).norm() < 1e-9);
  }
}

TEST_CASE("normals backward agrees with finite differences") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  mesh m = icosphere(1);
  for (auto& v : m.vertices) v += 0.1 * vec3(g(rng), g(rng), g(rng));
  std::vector<vec3> w(m.vertices.size());
  for (auto& x : w) x = vec3(g(rng), g(rng), g(rng));
  auto loss = [&](const std::vector<vec3>& pos) {
    std::vector<vec3> n;
    compute_vertex_normals(pos, m.triangles, n);
    double s = 0;
    for (std::size_t i = 0; i < n.size(); ++i) s += w[i].dot(n[i]);
    return s;
  };
  std::vector<vec3> grad(m.vertices.size(), vec3::Zero());
  vertex_normals_backward(m.vertices, m.triangles, w, grad);
  const double h = 1e-6;
  double       worst = 0;
  for (std::size_t v = 0; v < m.vertices.size(); ++v) {
    for (int d = 0; d < 3; ++d) {
      auto p = m.vertices, q = m.vertices;
      p[v][d] += h;
      q[v][d] -= h;
      const double fd = (loss(p) - loss(q)) / (2 * h);
      worst = std::max(worst, std::abs(fd - grad[v][d]) / std::max(1.0, std::abs(grad[v][d])));
    }
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("icosphere sizes and winding") {
  for (int k = 0; k <= 3; ++k) {
    const mesh m = icosphere(k);
    CHECK(m.vertex_count() == 10 * (1 << (2 * k)) + 2);
    CHECK(m.triangles.size() == static_cast<std::size_t>(20 * (1 << (2 * k))));
    for (const auto& t : m.triangles) {
      const vec3 n = (m.vertices[t[1]] - m.vertices[t[0]]).cross(m.vertices[t[2]] - m.vertices[t[0]]);
      CHECK(n.dot(m.vertices[t[0]]) > 0);
    }
  }
}

TEST_CASE("offset projection onto a plane") {
  const mesh plane = plane_grid(20, 8);
  const vec3 p     = offset_surface_project(plane, 4.0, vec3(1, 2, 7));
  CHECK((p - vec3(1, 2, 4)).norm() < 1e-12);
  const vec3 q = offset_surface_project(plane, 0.0, vec3(1, 2, 7));
  CHECK((q - vec3(1, 2, 0)).norm() < 1e-12);
}

TEST_CASE("offset projection on an axis-aligned sphere vertex") {
  // octasphere has a vertex exactly on +x, so the closest point is exact
  const mesh sphere = octasphere(4);
  const vec3 p      = offset_surface_project(sphere, 1.0, vec3(3, 0, 0));
  CHECK((p - vec3(2, 0, 0)).norm() < 1e-12);
}

TEST_CASE("offset result lies at the offset distance from the base surface") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g;
  const mesh           sphere = scaled(icosphere(3), 50.0);
  const offset_surface off(sphere, 6.0);
  for (int i = 0; i < 200; ++i) {
    const vec3 q   = vec3(g(rng), g(rng), g(rng)).normalized() * (30.0 + 40.0 * std::abs(g(rng)));
    const vec3 p   = off.project(q);
    const auto hit = brute_closest(sphere, p);
    CHECK(std::abs(hit.distance - 6.0) < 1e-6);
    CHECK(std::abs(off.signed_distance(p)) < 1e-6);
  }
  const vec3 on = offset_surface(sphere, 0.0).project(vec3(10, 70, -3));
  CHECK(brute_closest(sphere, on).distance < 1e-9);
}

TEST_CASE("grid closest point agrees with brute force") {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> g;
  mesh m = scaled(icosphere(2), 30.0);
  for (auto& v : m.vertices) v += vec3(g(rng), g(rng), g(rng));
  const closest_point_index index(m);
  for (int i = 0; i < 500; ++i) {
    const vec3 q     = 40.0 * vec3(g(rng), g(rng), g(rng));
    const auto fast  = index.query(q);
    const auto slow  = brute_closest(m, q);
    CHECK(std::abs(fast.distance - slow.distance) < 1e-12);
  }
}

TEST_CASE("empty mesh is rejected by offset projection") {
  CHECK_THROWS_AS(offset_surface_project(mesh{}, 1.0, vec3::Zero()), error);
}

TEST_CASE("triangle index validation") {
  mesh m = unit_square();
  m.triangles.push_back({0, 1, 9});
  CHECK_THROWS_AS(m.validate(), error);
}

TEST_CASE("OBJ round trip") {
  mesh m        = icosphere(1);
  m.topology_id = "sphere-42";
  const auto path = (std::filesystem::temp_directory_path() / "craniofit_obj_roundtrip.obj").string();
  write_obj(m, path);
  const mesh r = read_obj(path);
  CHECK(r.topology_id == "sphere-42");
  REQUIRE(r.vertex_count() == m.vertex_count());
  CHECK(r.triangles == m.triangles);
  for (int v = 0; v < m.vertex_count(); ++v) CHECK(r.vertices[v] == m.vertices[v]);
  std::remove(path.c_str());
}

TEST_CASE("OBJ parse errors cite the line") {
  const auto path = (std::filesystem::temp_directory_path() / "craniofit_obj_bad.obj").string();
  {
    std::FILE* f = std::fopen(path.c_str(), "w");
    std::fputs("v 0 0 0\nv 1 0\n", f);
    std::fclose(f);
  }
  try {
    read_obj(path);
    FAIL("expected a parse error");
  } catch (const error& e) {
    CHECK(e.kind() == error_kind::parse);
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
  std::remove(path.c_str());
}
