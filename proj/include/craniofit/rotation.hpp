#pragma once

#include <array>

#include "craniofit/geometry.hpp"

namespace craniofit {

// Rotation matrix of an axis-angle vector (Rodrigues).
mat3 rodrigues(const vec3& omega);

// Rotation matrix plus its partial derivatives w.r.t. the three axis-angle
// components. Accurate through omega = 0.
struct rotation_with_derivatives {
  mat3                rotation;
  std::array<mat3, 3> d;
};

rotation_with_derivatives rodrigues_with_derivatives(const vec3& omega);

// Cross-product matrix [v]x.
mat3 skew(const vec3& v);

// Axis-angle vector of a rotation matrix.
vec3 rotation_log(const mat3& r);

}  // namespace craniofit
