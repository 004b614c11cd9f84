#pragma once

#include <span>
#include <utility>
#include <vector>

#include "craniofit/geometry.hpp"

namespace craniofit {

using edge = std::pair<int, int>;

// Planar triangulation of 2D landmark positions (pixels). Edges are stored
// with first < second, sorted and duplicate-free; triangles are
// counter-clockwise in the (x, y) frame.
struct landmark_graph {
  std::vector<vec2> points;
  std::vector<edge> edges;
  std::vector<tri>  triangles;
};

// Bowyer-Watson Delaunay triangulation. Cocircular quadruples resolve to the
// diagonal incident to the lowest point index. Throws on fewer than three
// points, all-collinear input, or duplicate points.
landmark_graph delaunay(std::span<const vec2> points);

// Positive when d lies strictly inside the circumcircle of the
// counter-clockwise triangle (a, b, c).
double incircle(const vec2& a, const vec2& b, const vec2& c, const vec2& d);

// Twice the signed area of (a, b, c); positive for counter-clockwise.
double orient2d(const vec2& a, const vec2& b, const vec2& c);

}  // namespace craniofit
