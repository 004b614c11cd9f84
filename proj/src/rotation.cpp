#include "craniofit/rotation.hpp"

#include <cmath>

#include <Eigen/Geometry>

namespace craniofit {

mat3 skew(const vec3& v) {
  mat3 k;
  k << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return k;
}

namespace {

// R = I + a K + b K^2 with a = sin(t)/t, b = (1 - cos t)/t^2; also the
// scalar derivatives a'(t)/t and b'(t)/t.
struct rodrigues_coefficients {
  double a, b, da_over_t, db_over_t;
};

rodrigues_coefficients coefficients(double theta) {
  const double t2 = theta * theta;
  if (theta < 1e-2) {
    const double t4 = t2 * t2;
    return {1 - t2 / 6 + t4 / 120, 0.5 - t2 / 24 + t4 / 720,
        -1.0 / 3 + t2 / 30 - t4 / 840, -1.0 / 12 + t2 / 180 - t4 / 6720};
  }
  const double s = std::sin(theta), c = std::cos(theta);
  return {s / theta, (1 - c) / t2, (theta * c - s) / (t2 * theta),
      (theta * s - 2 * (1 - c)) / (t2 * t2)};
}

}  // namespace

mat3 rodrigues(const vec3& omega) {
  const auto coef = coefficients(omega.norm());
  const mat3 k    = skew(omega);
  return mat3::Identity() + coef.a * k + coef.b * k * k;
}

rotation_with_derivatives rodrigues_with_derivatives(const vec3& omega) {
  const auto coef = coefficients(omega.norm());
  const mat3 k    = skew(omega);
  const mat3 k2   = k * k;
  rotation_with_derivatives out;
  out.rotation = mat3::Identity() + coef.a * k + coef.b * k2;
  for (int i = 0; i < 3; ++i) {
    const mat3 e = skew(vec3::Unit(i));
    out.d[i] = coef.da_over_t * omega[i] * k + coef.a * e +
               coef.db_over_t * omega[i] * k2 + coef.b * (e * k + k * e);
  }
  return out;
}

vec3 rotation_log(const mat3& r) {
  const Eigen::AngleAxisd aa(r);
  return aa.axis() * aa.angle();
}

}  // namespace craniofit
