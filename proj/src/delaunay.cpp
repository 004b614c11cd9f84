#include "craniofit/delaunay.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>

#include "craniofit/error.hpp"

namespace craniofit {

double orient2d(const vec2& a, const vec2& b, const vec2& c) {
  return (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
}

double incircle(const vec2& a, const vec2& b, const vec2& c, const vec2& d) {
  const double adx = a.x() - d.x(), ady = a.y() - d.y();
  const double bdx = b.x() - d.x(), bdy = b.y() - d.y();
  const double cdx = c.x() - d.x(), cdy = c.y() - d.y();
  const double ad  = adx * adx + ady * ady;
  const double bd  = bdx * bdx + bdy * bdy;
  const double cd  = cdx * cdx + cdy * cdy;
  return adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) +
         ad * (bdx * cdy - bdy * cdx);
}

namespace {

// Magnitude scale of the incircle determinant for tolerance purposes.
double incircle_scale(const vec2& a, const vec2& b, const vec2& c, const vec2& d) {
  const double r = std::max({(a - d).norm(), (b - d).norm(), (c - d).norm()});
  return r * r * r * r;
}

constexpr double cocircular_eps = 1e-10;

void check_input(std::span<const vec2> points) {
  if (points.size() < 3) {
    throw_invalid("delaunay needs at least 3 points, got " + std::to_string(points.size()));
  }
  std::map<std::pair<double, double>, int> seen;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!points[i].allFinite()) throw_invalid("point " + std::to_string(i) + " is not finite");
    auto [it, inserted] = seen.emplace(std::make_pair(points[i].x(), points[i].y()), i);
    if (!inserted) {
      throw_invalid("duplicate points at indices " + std::to_string(it->second) + " and " +
                    std::to_string(i));
    }
  }
  double extent = 0;
  for (const auto& p : points) extent = std::max(extent, (p - points[0]).norm());
  bool collinear = true;
  for (std::size_t i = 1; i < points.size() && collinear; ++i) {
    for (std::size_t j = i + 1; j < points.size(); ++j) {
      if (std::abs(orient2d(points[0], points[i], points[j])) > 1e-12 * extent * extent) {
        collinear = false;
        break;
      }
    }
  }
  if (collinear) throw_invalid("delaunay input points are all collinear");
}

struct triangle_rec {
  tri  v;
  bool alive = true;
};

}  // namespace

landmark_graph delaunay(std::span<const vec2> points) {
  check_input(points);
  const int n = static_cast<int>(points.size());

  std::vector<vec2> pts(points.begin(), points.end());
  vec2 lo = pts[0], hi = pts[0];
  for (const auto& p : pts) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const vec2   mid  = (lo + hi) / 2;
  const double span = std::max((hi - lo).maxCoeff(), 1e-9);
  // super-triangle vertices n, n+1, n+2
  pts.push_back(mid + vec2(-100 * span, -50 * span));
  pts.push_back(mid + vec2(100 * span, -50 * span));
  pts.push_back(mid + vec2(0, 100 * span));

  std::vector<triangle_rec> tris{{{n, n + 1, n + 2}}};
  for (int p = 0; p < n; ++p) {
    std::map<std::pair<int, int>, int> boundary;  // directed edge -> count
    for (auto& t : tris) {
      if (!t.alive) continue;
      const auto& a = pts[t.v[0]];
      const auto& b = pts[t.v[1]];
      const auto& c = pts[t.v[2]];
      if (incircle(a, b, c, pts[p]) > 0) {
        t.alive = false;
        for (int k = 0; k < 3; ++k) {
          const int u = t.v[k], w = t.v[(k + 1) % 3];
          boundary[{u, w}] += 1;
        }
      }
    }
    for (const auto& [e, count] : boundary) {
      // interior edges of the cavity appear once in each direction
      if (boundary.count({e.second, e.first})) continue;
      tris.push_back({{e.first, e.second, p}});
    }
    std::erase_if(tris, [](const triangle_rec& t) { return !t.alive; });
  }

  std::vector<tri> result;
  for (const auto& t : tris) {
    if (t.v[0] >= n || t.v[1] >= n || t.v[2] >= n) continue;
    result.push_back(t.v);
  }

  // Lawson pass: repair any numerically non-Delaunay edge and apply the
  // lowest-index diagonal rule on cocircular quads.
  for (int pass = 0; pass < n * n + 16; ++pass) {
    std::map<std::pair<int, int>, std::pair<int, int>> owner;  // undirected edge -> (tri, opposite)
    bool changed = false;
    for (std::size_t t = 0; t < result.size() && !changed; ++t) {
      for (int k = 0; k < 3 && !changed; ++k) {
        const int a = result[t][k], b = result[t][(k + 1) % 3], c = result[t][(k + 2) % 3];
        const auto key = std::minmax(a, b);
        auto it = owner.find(key);
        if (it == owner.end()) {
          owner.emplace(key, std::make_pair(static_cast<int>(t), c));
          continue;
        }
        const int other = it->second.first, d = it->second.second;
        // quad a, d, b, c: triangle (a, b, c) and the other one holds (b, a, d)
        const double det   = incircle(pts[a], pts[b], pts[c], pts[d]);
        const double scale = incircle_scale(pts[a], pts[b], pts[c], pts[d]);
        bool flip = false;
        if (det > cocircular_eps * scale) {
          flip = true;
        } else if (std::abs(det) <= cocircular_eps * scale) {
          flip = std::min(c, d) < std::min(a, b);
        }
        // flipping requires a strictly convex quad
        if (flip && orient2d(pts[c], pts[d], pts[b]) > 0 && orient2d(pts[d], pts[c], pts[a]) > 0) {
          result[t]     = {c, a, d};
          result[other] = {d, b, c};
          changed       = true;
        }
      }
    }
    if (!changed) break;
  }

  landmark_graph graph;
  graph.points.assign(points.begin(), points.end());
  std::set<edge> edges;
  for (auto& t : result) {
    if (orient2d(graph.points[t[0]], graph.points[t[1]], graph.points[t[2]]) < 0) {
      std::swap(t[1], t[2]);
    }
    for (int k = 0; k < 3; ++k) {
      const auto [lo_idx, hi_idx] = std::minmax(t[k], t[(k + 1) % 3]);
      edges.emplace(lo_idx, hi_idx);
    }
  }
  std::sort(result.begin(), result.end());
  graph.triangles = std::move(result);
  graph.edges.assign(edges.begin(), edges.end());
  return graph;
}

}  // namespace craniofit
