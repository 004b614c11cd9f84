#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace craniofit {

using vec2 = Eigen::Vector2d;
using vec3 = Eigen::Vector3d;
using mat3 = Eigen::Matrix3d;
using tri  = std::array<int, 3>;

// Triangle mesh in millimetres. Meshes with equal topology_id share vertex
// count and triangle list.
struct mesh {
  std::vector<vec3> vertices;
  std::vector<tri>  triangles;
  std::string       topology_id;

  int vertex_count() const { return static_cast<int>(vertices.size()); }

  // Throws when a triangle references a missing vertex.
  void validate() const;
};

// Area-weighted vertex normals. Vertices whose incident triangles all have
// zero area get a zero normal and are listed in `undefined`.
struct normals_result {
  std::vector<vec3> normals;
  std::vector<int>  undefined;
};

normals_result vertex_normals(const mesh& m);

// Same computation over raw arrays; `normals` is resized.
void compute_vertex_normals(std::span<const vec3> positions,
    std::span<const tri> triangles, std::vector<vec3>& normals,
    std::vector<int>* undefined = nullptr);

// Reverse-mode derivative of compute_vertex_normals: accumulates into
// grad_positions the gradient of a scalar whose gradient w.r.t. the unit
// normals is grad_normals.
void vertex_normals_backward(std::span<const vec3> positions,
    std::span<const tri> triangles, std::span<const vec3> grad_normals,
    std::span<vec3> grad_positions);

// Vertex adjacency (sorted, duplicate-free neighbour lists).
std::vector<std::vector<int>> vertex_neighbors(
    int vertex_count, std::span<const tri> triangles);

// Unit icosphere subdivided `level` times: 10*4^level+2 vertices, outward
// counter-clockwise winding.
mesh icosphere(int level);

// Unit octahedral sphere subdivided `level` times; has vertices on the axes.
mesh octasphere(int level);

// Rigid transform x -> rotation * x + translation.
struct rigid_transform {
  mat3 rotation    = mat3::Identity();
  vec3 translation = vec3::Zero();

  vec3            apply(const vec3& p) const { return rotation * p + translation; }
  rigid_transform inverse() const;
};

// Rigid transform minimizing sum |R from_i + t - to_i|^2 (orthogonal
// Procrustes via SVD, reflections excluded). Needs >= 3 non-collinear pairs.
rigid_transform procrustes(std::span<const vec3> from, std::span<const vec3> to);

// Per-vertex distances between two equally sized point sets, optionally
// after rigidly aligning `a` onto `b`.
struct deviation {
  double max  = 0;
  double mean = 0;
};
deviation vertex_deviation(std::span<const vec3> a, std::span<const vec3> b, bool align);

// Closest-point query against a fixed mesh, accelerated by a uniform grid.
// Exact point-triangle distances.
class closest_point_index {
 public:
  struct hit {
    vec3   point;
    int    triangle = -1;
    double distance = 0;
  };

  explicit closest_point_index(const mesh& m);

  hit query(const vec3& q) const;

  const mesh& surface() const { return mesh_; }

 private:
  int cell_index(int i, int j, int k) const {
    return (k * dims_[1] + j) * dims_[0] + i;
  }
  std::array<int, 3> cell_of(const vec3& p) const;

  mesh                          mesh_;
  vec3                          origin_;
  double                        cell_size_ = 1;
  std::array<int, 3>            dims_{1, 1, 1};
  std::vector<std::vector<int>> cells_;
};

// Closest point on the triangle (a, b, c) to p.
vec3 closest_point_on_triangle(
    const vec3& p, const vec3& a, const vec3& b, const vec3& c);

// Offset surface at distance `offset` outside a base mesh. Projection is the
// closest base point moved `offset` along the direction towards the query
// (the triangle normal when the query lies on the base).
class offset_surface {
 public:
  offset_surface(const mesh& base, double offset);

  vec3   project(const vec3& q) const;
  // Signed distance from q to the offset surface (positive outside).
  double signed_distance(const vec3& q) const;

  double offset() const { return offset_; }
  const closest_point_index& index() const { return index_; }

 private:
  closest_point_index index_;
  double              offset_;
};

// One-shot form of offset_surface::project.
vec3 offset_surface_project(const mesh& m, double offset, const vec3& query);

}  // namespace craniofit
