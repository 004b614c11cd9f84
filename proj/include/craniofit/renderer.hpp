#pragma once

#include <array>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "craniofit/face_model.hpp"
#include "craniofit/image.hpp"
#include "craniofit/rotation.hpp"

namespace craniofit {

inline constexpr double default_reflectance = 0.8;

struct camera_intrinsics {
  double focal = 1.0;
  vec2   principal_point = vec2::Zero();
  int    width  = 1;
  int    height = 1;

  void validate() const;
};

// Pinhole camera: x_c = T^-1 (p - t), u = principal + focal * (x_c/z_c, y_c/z_c).
struct camera {
  camera_intrinsics intrinsics;
  vec3              rotation    = vec3::Zero();  // axis-angle T
  vec3              translation = vec3::Zero();  // t, mm
};

struct projection {
  vec2   pixel;
  double depth;
};

// Throws when the point is not in front of the camera.
projection project(const camera& cam, const vec3& p);

// Real spherical harmonics, bands 0..2, order (0,0),(1,-1),(1,0),(1,1),
// (2,-2),(2,-1),(2,0),(2,1),(2,2).
std::array<double, sh_coefficients> sh_basis(const vec3& n);
// d H_b / d n for each basis function.
std::array<vec3, sh_coefficients> sh_basis_gradient(const vec3& n);

// Per-channel r * sum_b gamma[c*9+b] H_b(n). Throws unless |n| = 1 within 1e-6.
vec3 shade(const vec3& normal, const Eigen::Ref<const Eigen::VectorXd>& gamma,
    double reflectance = default_reflectance);

struct rendered_image {
  rgb_image           color;
  std::vector<double> depth;     // +inf where empty
  std::vector<int>    coverage;  // triangle index, -1 where empty

  int width() const { return color.width; }
  int height() const { return color.height; }
  std::size_t covered_pixel_count() const;
};

// Z-buffered rasterization sampled at pixel centres (x + 0.5, y + 0.5).
// Depth is interpolated perspective-correctly, colour with screen-space
// barycentrics, then clamped to [0, 1]. Triangles touching a vertex with
// non-positive depth are skipped. Ties in depth keep the lower triangle.
rendered_image rasterize(std::span<const vec2> screen, std::span<const double> depth,
    std::span<const vec3> colors, std::span<const tri> triangles, int width, int height);

// Everything the forward pass computes for one code.
struct render_frame {
  mesh                      posed;
  std::vector<vec3>         normals;      // world space, unit (zero if undefined)
  std::vector<vec2>         screen;
  std::vector<double>       depth;        // camera-space z
  std::vector<vec3>         colors;
  rotation_with_derivatives camera_rotation;
};

render_frame   forward_frame(const face_model& model, const semantic_code& code,
      const camera_intrinsics& intrinsics);
rendered_image render(const face_model& model, const semantic_code& code,
    const camera_intrinsics& intrinsics);

// Re-renders with the per-pixel triangle assignment of `coverage_source`
// held fixed. This is the function whose derivative backward_image returns.
rendered_image render_fixed_coverage(const face_model& model, const semantic_code& code,
    const camera_intrinsics& intrinsics, const rendered_image& coverage_source);

// Forward outputs F_i = (u_i, c_i) for selected vertices.
struct vertex_output {
  vec2   pixel;
  vec3   color;
  double depth;
};
std::vector<vertex_output> forward_vertices(const face_model& model, const semantic_code& code,
    const camera_intrinsics& intrinsics, std::span<const int> vertices);

// Projected positions only; evaluates just the listed vertices.
std::vector<vec2> project_vertices(const face_model& model, const semantic_code& code,
    const camera_intrinsics& intrinsics, std::span<const int> vertices);

// Incoming gradient at one vertex's outputs.
struct output_gradient {
  int  vertex;
  vec2 d_pixel = vec2::Zero();
  vec3 d_color = vec3::Zero();
};

// Gradient over all code_dim entries of sum_i <d_pixel_i, u_i> + <d_color_i, c_i>.
Eigen::VectorXd backward(const face_model& model, const semantic_code& code,
    const camera_intrinsics& intrinsics, std::span<const output_gradient> gradients);

// Gradient of sum_p <pixel_gradient_p, I_p> with I = render_fixed_coverage(code, base).
Eigen::VectorXd backward_image(const face_model& model, const semantic_code& code,
    const camera_intrinsics& intrinsics, const rendered_image& base,
    const rgb_image& pixel_gradient);

// Canonical normalization camera and lighting, derived from the mean shape.
struct canonical_setup {
  camera_intrinsics intrinsics;
  vec3              rotation;
  vec3              translation;
  Eigen::VectorXd   gamma;
};
canonical_setup canonical_setup_for(const face_model& model);

// Code carrying geometry G with the global joint rotation zeroed and the
// canonical rendering block.
semantic_code canonical_code(const face_model& model, const Eigen::Ref<const Eigen::VectorXd>& geometry);

// Moves the camera of `code` on a rigid orbit about the world origin: both
// its rotation and its centre are rotated by the axis-angle `omega`.
semantic_code orbit_camera(const semantic_code& code, const vec3& omega);

rendered_image normalize_render(const face_model& model, const semantic_code& code);
rendered_image normalize_render_geometry(const face_model& model, const Eigen::Ref<const Eigen::VectorXd>& geometry);

// d/dG of sum_p <pixel_gradient_p, normalize_render(G)_p> at fixed coverage of base.
Eigen::VectorXd normalize_render_backward(const face_model& model,
    const Eigen::Ref<const Eigen::VectorXd>& geometry, const rendered_image& base,
    const rgb_image& pixel_gradient);

}  // namespace craniofit
