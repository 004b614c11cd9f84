#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "craniofit/geometry.hpp"

namespace craniofit {

inline constexpr int shape_dim      = 90;
inline constexpr int expression_dim = 90;
inline constexpr int joint_count    = 5;  // global, neck, jaw, left eye, right eye
inline constexpr int pose_dim       = 3 * joint_count;
inline constexpr int geometry_dim   = shape_dim + expression_dim + pose_dim;  // 195
inline constexpr int sh_coefficients = 9;
inline constexpr int gamma_dim      = 3 * sh_coefficients;
inline constexpr int rendering_dim  = 6 + gamma_dim;  // 33
inline constexpr int code_dim       = geometry_dim + rendering_dim;  // 228

enum joint_id : int { joint_global = 0, joint_neck, joint_jaw, joint_left_eye, joint_right_eye };

// The 228-entry semantic code x = (alpha, delta, theta, T, t, gamma).
// gamma is channel-major: gamma[c * 9 + b] weights SH basis b for channel c.
struct semantic_code {
  static constexpr int alpha_offset  = 0;
  static constexpr int delta_offset  = shape_dim;
  static constexpr int theta_offset  = shape_dim + expression_dim;
  static constexpr int rotation_offset    = geometry_dim;
  static constexpr int translation_offset = geometry_dim + 3;
  static constexpr int gamma_offset       = geometry_dim + 6;

  Eigen::VectorXd values = Eigen::VectorXd::Zero(code_dim);

  auto alpha() { return values.segment<shape_dim>(alpha_offset); }
  auto alpha() const { return values.segment<shape_dim>(alpha_offset); }
  auto delta() { return values.segment<expression_dim>(delta_offset); }
  auto delta() const { return values.segment<expression_dim>(delta_offset); }
  auto theta() { return values.segment<pose_dim>(theta_offset); }
  auto theta() const { return values.segment<pose_dim>(theta_offset); }
  auto geometry() { return values.head<geometry_dim>(); }
  auto geometry() const { return values.head<geometry_dim>(); }
  auto rendering() { return values.tail<rendering_dim>(); }
  auto rendering() const { return values.tail<rendering_dim>(); }
  auto camera_rotation() { return values.segment<3>(rotation_offset); }
  auto camera_rotation() const { return values.segment<3>(rotation_offset); }
  auto camera_translation() { return values.segment<3>(translation_offset); }
  auto camera_translation() const { return values.segment<3>(translation_offset); }
  auto gamma() { return values.segment<gamma_dim>(gamma_offset); }
  auto gamma() const { return values.segment<gamma_dim>(gamma_offset); }
};

// Linear blendshape model with jointed pose (linear blend skinning).
struct face_model {
  mesh            mean_shape;
  Eigen::MatrixXd shape_basis;       // 3N x shape_dim, row 3v+d
  Eigen::MatrixXd expression_basis;  // 3N x expression_dim
  std::array<vec3, joint_count> joint_pivots{vec3::Zero(), vec3::Zero(), vec3::Zero(), vec3::Zero(), vec3::Zero()};
  std::array<int, joint_count>  joint_parents{-1, 0, 1, 1, 1};
  Eigen::MatrixXd  skinning_weights;  // N x joint_count, rows sum to 1
  std::map<int, int> anthropometric_map;  // landmark id -> vertex index

  int vertex_count() const { return mean_shape.vertex_count(); }

  // Throws when basis sizes, skinning rows or the landmark map are
  // inconsistent with the mean shape.
  void validate() const;
};

using coefficients = Eigen::Ref<const Eigen::VectorXd>;

// Mesh for coefficients (alpha, delta, theta); topology of the mean shape.
mesh evaluate(const face_model& model, const coefficients& alpha,
    const coefficients& delta, const coefficients& theta);

// Posed positions of the listed vertices only.
std::vector<vec3> evaluate_vertices(const face_model& model,
    const coefficients& alpha, const coefficients& delta,
    const coefficients& theta, std::span<const int> vertices);

mesh evaluate(const face_model& model, const Eigen::Ref<const Eigen::VectorXd>& geometry);

// d(posed vertex)/d(alpha, delta, theta) for the listed vertices:
// (3 * vertices.size()) x geometry_dim, rows 3i..3i+2 belong to vertices[i].
Eigen::MatrixXd evaluate_jacobian(const face_model& model,
    const coefficients& alpha, const coefficients& delta,
    const coefficients& theta, std::span<const int> vertices);

// Per-vertex gradient contribution for geometry_vjp.
struct vertex_gradient {
  int  vertex;
  vec3 gradient;
};

// Contracts d(posed vertices)/d(alpha, delta, theta) with per-vertex
// gradients; returns a geometry_dim vector.
Eigen::VectorXd geometry_vjp(const face_model& model, const coefficients& geometry,
    std::span<const vertex_gradient> gradients);

// Energy profile for synthetic bases: RMS per-vertex displacement (mm) per
// unit coefficient, one entry per basis column.
struct basis_energy_profile {
  std::vector<double> shape;
  std::vector<double> expression;

  static basis_energy_profile standard();
  static basis_energy_profile zeros();
};

// Deterministic synthetic head model. vertex_count must be an icosphere
// count 10 * 4^k + 2 (12, 42, 162, 642, 2562, 10242, ...).
face_model synthesize_model(std::uint64_t seed, int vertex_count = 2562,
    const basis_energy_profile& energy = basis_energy_profile::standard());

// Binary model container: "CFM1" header then float64 blocks.
void        write_model(const face_model& model, const std::string& path);
face_model  read_model(const std::string& path);

// Text "landmark_id vertex_index" per line.
void               write_anthropometric_map(const std::map<int, int>& map, const std::string& path);
std::map<int, int> read_anthropometric_map(const std::string& path);

}  // namespace craniofit
