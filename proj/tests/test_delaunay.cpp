#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "doctest.h"

#include "craniofit/delaunay.hpp"
#include "craniofit/error.hpp"

using namespace craniofit;

namespace {

// Exact-as-possible circumcircle test written without the library predicates.
bool strictly_inside_circumcircle(const vec2& a, const vec2& b, const vec2& c, const vec2& p) {
  const double d  = 2 * (a.x() * (b.y() - c.y()) + b.x() * (c.y() - a.y()) + c.x() * (a.y() - b.y()));
  const double ux = (a.squaredNorm() * (b.y() - c.y()) + b.squaredNorm() * (c.y() - a.y()) + c.squaredNorm() * (a.y() - b.y())) / d;
  const double uy = (a.squaredNorm() * (c.x() - b.x()) + b.squaredNorm() * (a.x() - c.x()) + c.squaredNorm() * (b.x() - a.x())) / d;
  const vec2   centre(ux, uy);
  const double r = (a - centre).norm();
  return (p - centre).norm() < r * (1 - 1e-9);
}

int hull_size(const std::vector<vec2>& pts) {
  std::vector<int> idx(pts.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    return pts[a].x() < pts[b].x() || (pts[a].x() == pts[b].x() && pts[a].y() < pts[b].y());
  });
  auto cross = [&](int o, int a, int b) {
    return (pts[a] - pts[o]).x() * (pts[b] - pts[o]).y() - (pts[a] - pts[o]).y() * (pts[b] - pts[o]).x();
  };
  std::vector<int> h(2 * idx.size());
  int k = 0;
  for (int i : idx) {
    while (k >= 2 && cross(h[k - 2], h[k - 1], i) <= 0) --k;
    h[k++] = i;
  }
  for (int j = static_cast<int>(idx.size()) - 2, t = k + 1; j >= 0; --j) {
    const int i = idx[j];
    while (k >= t && cross(h[k - 2], h[k - 1], i) <= 0) --k;
    h[k++] = i;
  }
  return k - 1;
}

std::vector<vec2> random_points(std::mt19937_64& rng, int n, double scale) {
  std::uniform_real_distribution<double> u(0.0, scale);
  std::vector<vec2> pts;
  for (int i = 0; i < n; ++i) pts.emplace_back(u(rng), u(rng));
  return pts;
}

void check_delaunay(const std::vector<vec2>& pts, const landmark_graph& g) {
  CHECK(std::is_sorted(g.edges.begin(), g.edges.end()));
  CHECK(std::adjacent_find(g.edges.begin(), g.edges.end()) == g.edges.end());
  const int n = static_cast<int>(pts.size());
  CHECK(static_cast<int>(g.triangles.size()) == 2 * n - hull_size(pts) - 2);
  for (const auto& t : g.triangles) {
    for (int p = 0; p < n; ++p) {
      if (p == t[0] || p == t[1] || p == t[2]) continue;
      CHECK_FALSE(strictly_inside_circumcircle(pts[t[0]], pts[t[1]], pts[t[2]], pts[p]));
    }
  }
}

}  // namespace

TEST_CASE("three points form one triangle") {
  const std::vector<vec2> pts = {{0, 0}, {4, 0}, {1, 3}};
  const auto g = delaunay(pts);
  CHECK(g.triangles.size() == 1);
  CHECK(g.edges == std::vector<edge>{{0, 1}, {0, 2}, {1, 2}});
}

TEST_CASE("unit square keeps the diagonal through the lowest index") {
  const std::vector<vec2> pts = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
  const auto g = delaunay(pts);
  CHECK(g.edges == std::vector<edge>{{0, 1}, {0, 2}, {0, 3}, {1, 2}, {2, 3}});
  // a different labelling of the same square: the diagonal still touches index 0
  const std::vector<vec2> rotated = {{1, 0}, {0, 0}, {0, 1}, {1, 1}};
  const auto r = delaunay(rotated);
  CHECK(r.edges == std::vector<edge>{{0, 1}, {0, 2}, {0, 3}, {1, 2}, {2, 3}});
}

TEST_CASE("random point sets satisfy the empty-circumcircle property") {
  std::mt19937_64 rng(30);
  for (int trial = 0; trial < 20; ++trial) {
    const auto pts = random_points(rng, 30, 240.0);
    check_delaunay(pts, delaunay(pts));
  }
}

TEST_CASE("delaunay is permutation invariant") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    const auto       pts = random_points(rng, 46, 240.0);
    std::vector<int> perm(pts.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<vec2> shuffled(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) shuffled[i] = pts[perm[i]];

    const auto     base = delaunay(pts);
    std::set<edge> a(base.edges.begin(), base.edges.end());
    std::set<edge> b;
    for (auto [i, j] : delaunay(shuffled).edges) b.insert(std::minmax(perm[i], perm[j]));
    CHECK(a == b);
  }
}

TEST_CASE("grid points with many cocircular quadruples") {
  std::vector<vec2> pts;
  for (int j = 0; j < 5; ++j)
    for (int i = 0; i < 6; ++i) pts.emplace_back(10.0 * i, 10.0 * j);
  const auto g = delaunay(pts);
  CHECK(g.triangles.size() == 2 * 5 * 4);
  CHECK(g.edges.size() == 5 * 5 + 4 * 6 + 5 * 4);
}

TEST_CASE("input validation") {
  CHECK_THROWS_AS(delaunay(std::vector<vec2>{{0, 0}, {1, 1}}), error);
  CHECK_THROWS_AS(delaunay(std::vector<vec2>{{0, 0}, {1, 1}, {2, 2}, {3, 3}}), error);
  try {
    delaunay(std::vector<vec2>{{0, 0}, {5, 1}, {2, 7}, {5, 1}});
    FAIL("expected duplicate error");
  } catch (const error& e) {
    const std::string msg = e.what();
    CHECK(msg.find('1') != std::string::npos);
    CHECK(msg.find('3') != std::string::npos);
  }
}
