#include "craniofit/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <utility>

#include <Eigen/Geometry>
#include <Eigen/SVD>

#include "craniofit/error.hpp"

namespace craniofit {

void mesh::validate() const {
  const auto n = vertex_count();
  for (std::size_t t = 0; t < triangles.size(); ++t) {
    for (auto idx : triangles[t]) {
      if (idx < 0 || idx >= n) {
        throw_invalid("triangle " + std::to_string(t) + " references vertex " +
                      std::to_string(idx) + " of " + std::to_string(n));
      }
    }
  }
}

void compute_vertex_normals(std::span<const vec3> positions,
    std::span<const tri> triangles, std::vector<vec3>& normals,
    std::vector<int>* undefined) {
  normals.assign(positions.size(), vec3::Zero());
  for (const auto& t : triangles) {
    const vec3 weighted = (positions[t[1]] - positions[t[0]])
                              .cross(positions[t[2]] - positions[t[0]]);
    for (auto v : t) normals[v] += weighted;
  }
  if (undefined) undefined->clear();
  for (std::size_t v = 0; v < normals.size(); ++v) {
    const auto len = normals[v].norm();
    if (len > 0) {
      normals[v] /= len;
    } else {
      normals[v].setZero();
      if (undefined) undefined->push_back(static_cast<int>(v));
    }
  }
}

normals_result vertex_normals(const mesh& m) {
  m.validate();
  normals_result result;
  compute_vertex_normals(m.vertices, m.triangles, result.normals, &result.undefined);
  return result;
}

void vertex_normals_backward(std::span<const vec3> positions,
    std::span<const tri> triangles, std::span<const vec3> grad_normals,
    std::span<vec3> grad_positions) {
  // unnormalized sums m_v, then dL/dm_v = (I - n n^T) g / |m_v|
  std::vector<vec3> sums(positions.size(), vec3::Zero());
  for (const auto& t : triangles) {
    const vec3 weighted = (positions[t[1]] - positions[t[0]])
                              .cross(positions[t[2]] - positions[t[0]]);
    for (auto v : t) sums[v] += weighted;
  }
  std::vector<vec3> grad_sums(positions.size(), vec3::Zero());
  for (std::size_t v = 0; v < sums.size(); ++v) {
    const auto len = sums[v].norm();
    if (len == 0) continue;
    const vec3  n = sums[v] / len;
    const auto& g = grad_normals[v];
    grad_sums[v]  = (g - n * n.dot(g)) / len;
  }
  for (const auto& t : triangles) {
    const vec3 gc = grad_sums[t[0]] + grad_sums[t[1]] + grad_sums[t[2]];
    if (gc.isZero(0)) continue;
    const vec3 e1 = positions[t[1]] - positions[t[0]];
    const vec3 e2 = positions[t[2]] - positions[t[0]];
    const vec3 g1 = e2.cross(gc);
    const vec3 g2 = gc.cross(e1);
    grad_positions[t[1]] += g1;
    grad_positions[t[2]] += g2;
    grad_positions[t[0]] -= g1 + g2;
  }
}

std::vector<std::vector<int>> vertex_neighbors(
    int vertex_count, std::span<const tri> triangles) {
  std::vector<std::vector<int>> adjacency(vertex_count);
  for (const auto& t : triangles) {
    for (int k = 0; k < 3; ++k) {
      adjacency[t[k]].push_back(t[(k + 1) % 3]);
      adjacency[t[k]].push_back(t[(k + 2) % 3]);
    }
  }
  for (auto& list : adjacency) {
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
  }
  return adjacency;
}

namespace {

mesh subdivide_sphere(mesh base, int level) {
  for (int l = 0; l < level; ++l) {
    std::map<std::pair<int, int>, int> midpoints;
    auto midpoint = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      if (auto it = midpoints.find(key); it != midpoints.end()) return it->second;
      const auto idx = base.vertex_count();
      base.vertices.push_back((base.vertices[a] + base.vertices[b]).normalized());
      midpoints.emplace(key, idx);
      return idx;
    };
    std::vector<tri> refined;
    refined.reserve(base.triangles.size() * 4);
    for (const auto& t : base.triangles) {
      const int ab = midpoint(t[0], t[1]);
      const int bc = midpoint(t[1], t[2]);
      const int ca = midpoint(t[2], t[0]);
      refined.push_back({t[0], ab, ca});
      refined.push_back({t[1], bc, ab});
      refined.push_back({t[2], ca, bc});
      refined.push_back({ab, bc, ca});
    }
    base.triangles = std::move(refined);
  }
  return base;
}

}  // namespace

mesh icosphere(int level) {
  if (level < 0) throw_invalid("icosphere level must be non-negative");
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  mesh         m;
  m.vertices = {{-1, phi, 0}, {1, phi, 0}, {-1, -phi, 0}, {1, -phi, 0},
      {0, -1, phi}, {0, 1, phi}, {0, -1, -phi}, {0, 1, -phi}, {phi, 0, -1},
      {phi, 0, 1}, {-phi, 0, -1}, {-phi, 0, 1}};
  for (auto& v : m.vertices) v.normalize();
  m.triangles = {{0, 11, 5}, {0, 5, 1}, {0, 1, 7}, {0, 7, 10}, {0, 10, 11},
      {1, 5, 9}, {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8}, {3, 9, 4},
      {3, 4, 2}, {3, 2, 6}, {3, 6, 8}, {3, 8, 9}, {4, 9, 5}, {2, 4, 11},
      {6, 2, 10}, {8, 6, 7}, {9, 8, 1}};
  m.topology_id = "icosphere-" + std::to_string(level);
  return subdivide_sphere(std::move(m), level);
}

mesh octasphere(int level) {
  if (level < 0) throw_invalid("octasphere level must be non-negative");
  mesh m;
  m.vertices  = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  m.triangles = {{0, 2, 4}, {2, 1, 4}, {1, 3, 4}, {3, 0, 4}, {2, 0, 5},
      {1, 2, 5}, {3, 1, 5}, {0, 3, 5}};
  m.topology_id = "octasphere-" + std::to_string(level);
  return subdivide_sphere(std::move(m), level);
}

rigid_transform rigid_transform::inverse() const {
  rigid_transform inv;
  inv.rotation    = rotation.transpose();
  inv.translation = -(inv.rotation * translation);
  return inv;
}

vec3 closest_point_on_triangle(
    const vec3& p, const vec3& a, const vec3& b, const vec3& c) {
  // Ericson, Real-Time Collision Detection 5.1.5
  const vec3   ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return a;
  const vec3   bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return a + ab * (d1 / (d1 - d3));
  const vec3   cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return a + ac * (d2 / (d2 - d6));
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
    return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
  }
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

closest_point_index::closest_point_index(const mesh& m) : mesh_(m) {
  mesh_.validate();
  if (mesh_.triangles.empty()) throw_invalid("closest-point query on an empty mesh");
  vec3 lo = vec3::Constant(std::numeric_limits<double>::max());
  vec3 hi = -lo;
  for (const auto& t : mesh_.triangles) {
    for (auto v : t) {
      lo = lo.cwiseMin(mesh_.vertices[v]);
      hi = hi.cwiseMax(mesh_.vertices[v]);
    }
  }
  const vec3   extent = (hi - lo).cwiseMax(1e-9);
  // about two triangles per cell on average for surface meshes
  const double cells_wanted =
      std::max(1.0, static_cast<double>(mesh_.triangles.size()) / 2.0);
  const double area_per_cell =
      (extent.x() * extent.y() + extent.y() * extent.z() + extent.z() * extent.x()) /
      cells_wanted;
  cell_size_ = std::max(std::sqrt(area_per_cell), 1e-6);
  for (int d = 0; d < 3; ++d) {
    dims_[d] = std::clamp(static_cast<int>(std::ceil(extent[d] / cell_size_)), 1, 256);
  }
  origin_ = lo;
  cells_.assign(static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2], {});
  for (std::size_t t = 0; t < mesh_.triangles.size(); ++t) {
    const auto& tr  = mesh_.triangles[t];
    vec3        tlo = mesh_.vertices[tr[0]].cwiseMin(mesh_.vertices[tr[1]])
                   .cwiseMin(mesh_.vertices[tr[2]]);
    vec3 thi = mesh_.vertices[tr[0]].cwiseMax(mesh_.vertices[tr[1]])
                   .cwiseMax(mesh_.vertices[tr[2]]);
    const auto c0 = cell_of(tlo), c1 = cell_of(thi);
    for (int k = c0[2]; k <= c1[2]; ++k)
      for (int j = c0[1]; j <= c1[1]; ++j)
        for (int i = c0[0]; i <= c1[0]; ++i)
          cells_[cell_index(i, j, k)].push_back(static_cast<int>(t));
  }
}

std::array<int, 3> closest_point_index::cell_of(const vec3& p) const {
  std::array<int, 3> c{};
  for (int d = 0; d < 3; ++d) {
    c[d] = std::clamp(
        static_cast<int>(std::floor((p[d] - origin_[d]) / cell_size_)), 0, dims_[d] - 1);
  }
  return c;
}

closest_point_index::hit closest_point_index::query(const vec3& q) const {
  hit    best;
  double best_sq = std::numeric_limits<double>::infinity();
  const auto center = cell_of(q);
  const int  max_ring = std::max({dims_[0], dims_[1], dims_[2]});
  // any cell at Chebyshev ring r is at least (r - 1) * cell_size away
  for (int ring = 0; ring <= max_ring; ++ring) {
    const double bound = std::max(0, ring - 1) * cell_size_;
    if (bound * bound > best_sq) break;
    for (int k = center[2] - ring; k <= center[2] + ring; ++k) {
      if (k < 0 || k >= dims_[2]) continue;
      for (int j = center[1] - ring; j <= center[1] + ring; ++j) {
        if (j < 0 || j >= dims_[1]) continue;
        for (int i = center[0] - ring; i <= center[0] + ring; ++i) {
          if (i < 0 || i >= dims_[0]) continue;
          const int chebyshev = std::max({std::abs(i - center[0]),
              std::abs(j - center[1]), std::abs(k - center[2])});
          if (chebyshev != ring) continue;
          for (auto t : cells_[cell_index(i, j, k)]) {
            const auto& tr = mesh_.triangles[t];
            const vec3  p  = closest_point_on_triangle(q, mesh_.vertices[tr[0]],
                mesh_.vertices[tr[1]], mesh_.vertices[tr[2]]);
            const double d = (p - q).squaredNorm();
            // lowest triangle index wins exact ties
            if (d < best_sq || (d == best_sq && t < best.triangle)) {
              best_sq       = d;
              best.point    = p;
              best.triangle = t;
            }
          }
        }
      }
    }
  }
  best.distance = std::sqrt(best_sq);
  return best;
}

offset_surface::offset_surface(const mesh& base, double offset)
    : index_(base), offset_(offset) {
  if (!(offset >= 0)) throw_invalid("offset must be non-negative");
}

namespace {

vec3 triangle_normal(const mesh& m, int t) {
  const auto& tr = m.triangles[t];
  const vec3  n  = (m.vertices[tr[1]] - m.vertices[tr[0]])
                     .cross(m.vertices[tr[2]] - m.vertices[tr[0]]);
  const auto len = n.norm();
  return len > 0 ? vec3(n / len) : vec3::UnitZ();
}

}  // namespace

vec3 offset_surface::project(const vec3& q) const {
  const auto h = index_.query(q);
  const vec3 n = triangle_normal(index_.surface(), h.triangle);
  vec3       dir = q - h.point;
  if (h.distance > 1e-12 && dir.dot(n) > 0) {
    dir /= h.distance;
  } else {
    dir = n;
  }
  return h.point + offset_ * dir;
}

double offset_surface::signed_distance(const vec3& q) const {
  const auto h = index_.query(q);
  const vec3 n = triangle_normal(index_.surface(), h.triangle);
  const bool outside = (q - h.point).dot(n) >= 0;
  return outside ? h.distance - offset_ : -h.distance - offset_;
}

vec3 offset_surface_project(const mesh& m, double offset, const vec3& query) {
  return offset_surface(m, offset).project(query);
}

rigid_transform procrustes(std::span<const vec3> from, std::span<const vec3> to) {
  if (from.size() != to.size()) throw_invalid("procrustes: point counts differ");
  if (from.size() < 3) throw_invalid("procrustes needs at least three point pairs");
  vec3 ca = vec3::Zero(), cb = vec3::Zero();
  for (std::size_t i = 0; i < from.size(); ++i) {
    ca += from[i];
    cb += to[i];
  }
  ca /= static_cast<double>(from.size());
  cb /= static_cast<double>(from.size());
  mat3 h = mat3::Zero();
  for (std::size_t i = 0; i < from.size(); ++i) h += (from[i] - ca) * (to[i] - cb).transpose();
  Eigen::JacobiSVD<mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  if (svd.singularValues()[1] <= 1e-12 * std::max(1.0, svd.singularValues()[0])) {
    throw_invalid("procrustes: points are collinear");
  }
  mat3 d = mat3::Identity();
  if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0) d(2, 2) = -1;
  rigid_transform out;
  out.rotation    = svd.matrixV() * d * svd.matrixU().transpose();
  out.translation = cb - out.rotation * ca;
  return out;
}

deviation vertex_deviation(std::span<const vec3> a, std::span<const vec3> b, bool align) {
  if (a.size() != b.size() || a.empty()) throw_invalid("vertex_deviation: point sets must match and be non-empty");
  const rigid_transform xf = align ? procrustes(a, b) : rigid_transform{};
  deviation             d;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double e = (xf.apply(a[i]) - b[i]).norm();
    d.max = std::max(d.max, e);
    d.mean += e;
  }
  d.mean /= static_cast<double>(a.size());
  return d;
}

}  // namespace craniofit
