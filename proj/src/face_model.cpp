#include "craniofit/face_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "craniofit/error.hpp"
#include "craniofit/landmark_layout.hpp"
#include "craniofit/rotation.hpp"

namespace craniofit {

void face_model::validate() const {
  mean_shape.validate();
  const auto n = vertex_count();
  if (shape_basis.rows() != 3 * n || shape_basis.cols() != shape_dim) {
    throw_invalid("shape basis must be 3N x " + std::to_string(shape_dim));
  }
  if (expression_basis.rows() != 3 * n || expression_basis.cols() != expression_dim) {
    throw_invalid("expression basis must be 3N x " + std::to_string(expression_dim));
  }
  if (skinning_weights.rows() != n || skinning_weights.cols() != joint_count) {
    throw_invalid("skinning weights must be N x " + std::to_string(joint_count));
  }
  for (int v = 0; v < n; ++v) {
    if ((skinning_weights.row(v).array() < 0).any()) {
      throw_invalid("negative skinning weight at vertex " + std::to_string(v));
    }
    if (std::abs(skinning_weights.row(v).sum() - 1.0) > 1e-9) {
      throw_invalid("skinning weights of vertex " + std::to_string(v) + " do not sum to 1");
    }
  }
  for (int j = 0; j < joint_count; ++j) {
    if (joint_parents[j] >= j) throw_invalid("joint parents must precede children");
  }
  for (const auto& [id, v] : anthropometric_map) {
    if (v < 0 || v >= n) {
      throw_invalid("landmark " + std::to_string(id) + " maps to missing vertex " + std::to_string(v));
    }
  }
}

namespace {

void check_lengths(const face_model& model, const coefficients& alpha,
    const coefficients& delta, const coefficients& theta) {
  if (alpha.size() != model.shape_basis.cols()) {
    throw_invalid("alpha has " + std::to_string(alpha.size()) + " entries, model expects " +
                  std::to_string(model.shape_basis.cols()));
  }
  if (delta.size() != model.expression_basis.cols()) {
    throw_invalid("delta has " + std::to_string(delta.size()) + " entries, model expects " +
                  std::to_string(model.expression_basis.cols()));
  }
  if (theta.size() != pose_dim) {
    throw_invalid("theta has " + std::to_string(theta.size()) + " entries, model expects " +
                  std::to_string(pose_dim));
  }
}

// World transforms of the joint chain and, optionally, their derivatives
// w.r.t. each of the pose_dim axis-angle entries.
struct posed_joints {
  std::array<mat3, joint_count> rotation;
  std::array<vec3, joint_count> translation;
  std::array<std::array<mat3, joint_count>, pose_dim> d_rotation;
  std::array<std::array<vec3, joint_count>, pose_dim> d_translation;
};

posed_joints pose_joints(const face_model& model, const coefficients& theta, bool derivatives) {
  posed_joints out;
  for (int j = 0; j < joint_count; ++j) {
    const auto  local  = rodrigues_with_derivatives(theta.segment<3>(3 * j));
    const vec3& pivot  = model.joint_pivots[j];
    const int   parent = model.joint_parents[j];
    const mat3  parent_rot = parent < 0 ? mat3::Identity() : out.rotation[parent];
    const vec3  parent_trans = parent < 0 ? vec3::Zero() : out.translation[parent];
    const vec3  offset = pivot - local.rotation * pivot;
    out.rotation[j]    = parent_rot * local.rotation;
    out.translation[j] = parent_rot * offset + parent_trans;
    if (!derivatives) continue;
    for (int p = 0; p < pose_dim; ++p) {
      mat3 dr = mat3::Zero();
      vec3 dt = vec3::Zero();
      if (parent >= 0) {
        dr = out.d_rotation[p][parent] * local.rotation;
        dt = out.d_rotation[p][parent] * offset + out.d_translation[p][parent];
      }
      if (p / 3 == j) {
        const mat3& dl = local.d[p % 3];
        dr += parent_rot * dl;
        dt -= parent_rot * (dl * pivot);
      }
      out.d_rotation[p][j]    = dr;
      out.d_translation[p][j] = dt;
    }
  }
  return out;
}

vec3 rest_position(const face_model& model, const coefficients& alpha,
    const coefficients& delta, int v) {
  vec3 r = model.mean_shape.vertices[v];
  r += model.shape_basis.middleRows<3>(3 * v) * alpha;
  r += model.expression_basis.middleRows<3>(3 * v) * delta;
  return r;
}

// Written as I + sum_j w_j (R_j - I) (equal because rows sum to 1) so that
// the rest pose reproduces the mean shape bit for bit.
mat3 blended_rotation(const face_model& model, const posed_joints& joints, int v) {
  mat3 m = mat3::Identity();
  for (int j = 0; j < joint_count; ++j) {
    m += model.skinning_weights(v, j) * (joints.rotation[j] - mat3::Identity());
  }
  return m;
}

vec3 blended_translation(const face_model& model, const posed_joints& joints, int v) {
  vec3 t = vec3::Zero();
  for (int j = 0; j < joint_count; ++j) t += model.skinning_weights(v, j) * joints.translation[j];
  return t;
}

}  // namespace

std::vector<vec3> evaluate_vertices(const face_model& model, const coefficients& alpha,
    const coefficients& delta, const coefficients& theta, std::span<const int> vertices) {
  check_lengths(model, alpha, delta, theta);
  const auto        joints = pose_joints(model, theta, false);
  std::vector<vec3> out;
  out.reserve(vertices.size());
  for (auto v : vertices) {
    const vec3 r = rest_position(model, alpha, delta, v);
    out.push_back(blended_rotation(model, joints, v) * r + blended_translation(model, joints, v));
  }
  return out;
}

mesh evaluate(const face_model& model, const coefficients& alpha, const coefficients& delta,
    const coefficients& theta) {
  check_lengths(model, alpha, delta, theta);
  const auto n = model.vertex_count();
  mesh       out;
  out.triangles   = model.mean_shape.triangles;
  out.topology_id = model.mean_shape.topology_id;
  out.vertices.resize(n);
  const Eigen::VectorXd rest_flat =
      model.shape_basis * alpha + model.expression_basis * delta;
  const auto joints = pose_joints(model, theta, false);
  for (int v = 0; v < n; ++v) {
    const vec3 r = model.mean_shape.vertices[v] + rest_flat.segment<3>(3 * v);
    out.vertices[v] = blended_rotation(model, joints, v) * r + blended_translation(model, joints, v);
  }
  return out;
}

mesh evaluate(const face_model& model, const Eigen::Ref<const Eigen::VectorXd>& geometry) {
  if (geometry.size() != geometry_dim) {
    throw_invalid("geometry block must have " + std::to_string(geometry_dim) + " entries");
  }
  return evaluate(model, geometry.segment<shape_dim>(0), geometry.segment<expression_dim>(shape_dim),
      geometry.segment<pose_dim>(shape_dim + expression_dim));
}

Eigen::MatrixXd evaluate_jacobian(const face_model& model, const coefficients& alpha,
    const coefficients& delta, const coefficients& theta, std::span<const int> vertices) {
  check_lengths(model, alpha, delta, theta);
  const auto      joints = pose_joints(model, theta, true);
  Eigen::MatrixXd jac(3 * static_cast<Eigen::Index>(vertices.size()), geometry_dim);
  for (std::size_t i = 0; i < vertices.size(); ++i) {
    const int  v = vertices[i];
    const vec3 r = rest_position(model, alpha, delta, v);
    const mat3 m = blended_rotation(model, joints, v);
    auto       rows = jac.middleRows<3>(3 * static_cast<Eigen::Index>(i));
    rows.leftCols<shape_dim>() = m * model.shape_basis.middleRows<3>(3 * v);
    rows.middleCols<expression_dim>(shape_dim) = m * model.expression_basis.middleRows<3>(3 * v);
    for (int p = 0; p < pose_dim; ++p) {
      vec3 d = vec3::Zero();
      for (int j = 0; j < joint_count; ++j) {
        const double w = model.skinning_weights(v, j);
        if (w == 0) continue;
        d += w * (joints.d_rotation[p][j] * r + joints.d_translation[p][j]);
      }
      rows.col(shape_dim + expression_dim + p) = d;
    }
  }
  return jac;
}

Eigen::VectorXd geometry_vjp(const face_model& model, const coefficients& geometry,
    std::span<const vertex_gradient> gradients) {
  if (geometry.size() != geometry_dim) {
    throw_invalid("geometry block must have " + std::to_string(geometry_dim) + " entries");
  }
  const auto alpha = geometry.segment<shape_dim>(0);
  const auto delta = geometry.segment<expression_dim>(shape_dim);
  const auto theta = geometry.segment<pose_dim>(shape_dim + expression_dim);
  const auto joints = pose_joints(model, theta, true);

  Eigen::VectorXd grad = Eigen::VectorXd::Zero(geometry_dim);
  std::array<mat3, joint_count> outer;
  std::array<vec3, joint_count> linear;
  outer.fill(mat3::Zero());
  linear.fill(vec3::Zero());
  for (const auto& [v, g] : gradients) {
    const vec3 r = rest_position(model, alpha, delta, v);
    const vec3 h = blended_rotation(model, joints, v).transpose() * g;
    grad.head<shape_dim>().noalias() += model.shape_basis.middleRows<3>(3 * v).transpose() * h;
    grad.segment<expression_dim>(shape_dim).noalias() +=
        model.expression_basis.middleRows<3>(3 * v).transpose() * h;
    for (int j = 0; j < joint_count; ++j) {
      const double w = model.skinning_weights(v, j);
      if (w == 0) continue;
      outer[j] += w * g * r.transpose();
      linear[j] += w * g;
    }
  }
  for (int p = 0; p < pose_dim; ++p) {
    double acc = 0;
    for (int j = 0; j < joint_count; ++j) {
      acc += joints.d_rotation[p][j].cwiseProduct(outer[j]).sum() +
             joints.d_translation[p][j].dot(linear[j]);
    }
    grad[shape_dim + expression_dim + p] = acc;
  }
  return grad;
}

basis_energy_profile basis_energy_profile::standard() {
  basis_energy_profile e;
  for (int k = 0; k < shape_dim; ++k) e.shape.push_back(4.0 / std::sqrt(k + 1.0));
  for (int k = 0; k < expression_dim; ++k) e.expression.push_back(2.0 / std::sqrt(k + 1.0));
  return e;
}

basis_energy_profile basis_energy_profile::zeros() {
  return {std::vector<double>(shape_dim, 0.0), std::vector<double>(expression_dim, 0.0)};
}

namespace {

double smoothstep(double lo, double hi, double x) {
  const double t = std::clamp((x - lo) / (hi - lo), 0.0, 1.0);
  return t * t * (3 - 2 * t);
}

double gauss2(double dx, double dy, double sx, double sy) {
  return std::exp(-0.5 * (dx * dx / (sx * sx) + dy * dy / (sy * sy)));
}

constexpr double head_rx = 78, head_ry = 100, head_rz = 92;
constexpr double face_scale_x = 60, face_scale_y = 80;

// Outward relief of facial features at frontal coordinates (mm, y down).
double facial_relief(double x, double y) {
  double h = 0;
  h += 18 * gauss2(x, y - 6, 7.5, 13);                          // nose
  h += 5 * gauss2(x, y + 38, 34, 6);                            // brow ridge
  h -= 7 * gauss2(x - 23, y + 20, 9, 9);                        // left orbit
  h -= 7 * gauss2(x + 23, y + 20, 9, 9);                        // right orbit
  h += 6 * gauss2(x, y - 58, 14, 8);                            // chin
  h += 4 * gauss2(x, y - 36, 16, 5);                            // lips
  h += 4 * gauss2(std::abs(x) - 38, y + 2, 12, 12);             // cheekbones
  return h;
}

Eigen::MatrixXd random_fields(std::mt19937_64& rng, const std::vector<vec3>& dirs,
    int count, bool frontal) {
  std::normal_distribution<double>       normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const auto      n = static_cast<Eigen::Index>(dirs.size());
  Eigen::MatrixXd fields = Eigen::MatrixXd::Zero(3 * n, count);
  for (int k = 0; k < count; ++k) {
    for (int bump = 0; bump < 6; ++bump) {
      vec3 center(normal(rng), normal(rng), normal(rng));
      if (frontal) center.z() = -std::abs(center.z()) - 0.5;
      center.normalize();
      const double width = frontal ? 0.25 + 0.35 * uniform(rng) : 0.35 + 0.55 * uniform(rng);
      const vec3   amp(normal(rng), normal(rng), normal(rng));
      for (Eigen::Index v = 0; v < n; ++v) {
        const double cosang = std::clamp(dirs[v].dot(center), -1.0, 1.0);
        const double ang    = std::acos(cosang);
        const double w      = std::exp(-0.5 * ang * ang / (width * width));
        fields.block<3, 1>(3 * v, k) += w * amp;
      }
    }
  }
  return fields;
}

// Modified Gram-Schmidt (two passes) then scale column k to RMS per-vertex
// displacement energy[k]. Columns that become dependent are zeroed.
void orthogonalize_and_scale(Eigen::MatrixXd& basis, const std::vector<double>& energy) {
  const double n_vertices = static_cast<double>(basis.rows() / 3);
  std::vector<bool> kept(basis.cols(), false);
  for (Eigen::Index k = 0; k < basis.cols(); ++k) {
    const double original = basis.col(k).norm();
    for (int pass = 0; pass < 2; ++pass) {
      for (Eigen::Index j = 0; j < k; ++j) {
        if (!kept[j]) continue;
        basis.col(k) -= basis.col(j).dot(basis.col(k)) * basis.col(j);
      }
    }
    const double len = basis.col(k).norm();
    if (len <= 1e-8 * std::max(original, 1e-300)) {
      basis.col(k).setZero();
      continue;
    }
    basis.col(k) /= len;
    kept[k] = true;
  }
  for (Eigen::Index k = 0; k < basis.cols(); ++k) {
    basis.col(k) *= energy[k] * std::sqrt(n_vertices);
  }
}

}  // namespace

face_model synthesize_model(std::uint64_t seed, int vertex_count,
    const basis_energy_profile& energy) {
  int level = -1;
  for (int k = 0; k <= 8; ++k) {
    if (10 * (1 << (2 * k)) + 2 == vertex_count) level = k;
  }
  if (vertex_count < 12 || level < 0) {
    throw_invalid("vertex count " + std::to_string(vertex_count) +
                  " is not an icosphere count 10*4^k+2");
  }
  if (static_cast<int>(energy.shape.size()) != shape_dim ||
      static_cast<int>(energy.expression.size()) != expression_dim) {
    throw_invalid("energy profile must list 90 shape and 90 expression energies");
  }
  auto check_profile = [](const std::vector<double>& e, const char* name) {
    for (std::size_t k = 0; k < e.size(); ++k) {
      if (!(e[k] >= 0) || (k > 0 && e[k] > e[k - 1])) {
        throw_invalid(std::string(name) + " energies must be non-negative and non-increasing");
      }
    }
  };
  check_profile(energy.shape, "shape");
  check_profile(energy.expression, "expression");

  face_model model;
  mesh       sphere = icosphere(level);
  const auto n      = sphere.vertex_count();
  std::vector<vec3> dirs = sphere.vertices;

  model.mean_shape.triangles   = sphere.triangles;
  model.mean_shape.topology_id = "craniofit-head-" + std::to_string(vertex_count);
  model.mean_shape.vertices.resize(n);
  std::vector<vec3> base(n);
  for (int v = 0; v < n; ++v) {
    const vec3& d = dirs[v];
    base[v] = vec3(head_rx * d.x(), head_ry * d.y(), head_rz * d.z());
    const double front = smoothstep(0.0, 0.6, -d.z());
    model.mean_shape.vertices[v] = base[v] + front * facial_relief(base[v].x(), base[v].y()) * d;
  }

  std::mt19937_64 rng(seed);
  model.shape_basis      = random_fields(rng, dirs, shape_dim, false);
  model.expression_basis = random_fields(rng, dirs, expression_dim, true);
  orthogonalize_and_scale(model.shape_basis, energy.shape);
  orthogonalize_and_scale(model.expression_basis, energy.expression);

  // joints: global, neck, jaw, left eye (+x), right eye (-x)
  auto surface_z = [&](double x, double y) {
    double best = 0, best_d = 1e300;
    for (int v = 0; v < n; ++v) {
      if (dirs[v].z() > -0.2) continue;
      const double d = std::hypot(base[v].x() - x, base[v].y() - y);
      if (d < best_d) {
        best_d = d;
        best   = model.mean_shape.vertices[v].z();
      }
    }
    return best;
  };
  const vec3 left_eye_surface(23, -20, surface_z(23, -20));
  const vec3 right_eye_surface(-23, -20, surface_z(-23, -20));
  model.joint_pivots[joint_global]    = vec3(0, 30, 10);
  model.joint_pivots[joint_neck]      = vec3(0, 95, 15);
  model.joint_pivots[joint_jaw]       = vec3(0, 15, 30);
  model.joint_pivots[joint_left_eye]  = left_eye_surface + vec3(0, 0, 12);
  model.joint_pivots[joint_right_eye] = right_eye_surface + vec3(0, 0, 12);
  model.joint_parents = {-1, 0, 1, 1, 1};

  model.skinning_weights = Eigen::MatrixXd::Zero(n, joint_count);
  for (int v = 0; v < n; ++v) {
    const vec3& p  = model.mean_shape.vertices[v];
    const double eye_l = 0.85 * std::exp(-0.5 * (p - left_eye_surface).squaredNorm() / 64.0);
    const double eye_r = 0.85 * std::exp(-0.5 * (p - right_eye_surface).squaredNorm() / 64.0);
    const double jaw   = 0.9 * smoothstep(22, 50, p.y()) * smoothstep(0.2, 0.6, -dirs[v].z());
    const double neck  = 0.85 * smoothstep(55, 98, p.y()) * (1 - smoothstep(0.2, 0.6, -dirs[v].z()));
    std::array<double, joint_count> w{0, neck, jaw, eye_l, eye_r};
    double sum = neck + jaw + eye_l + eye_r;
    if (sum > 1) {
      for (auto& x : w) x /= sum;
      sum = 1;
    }
    w[joint_global] = 1 - (w[1] + w[2] + w[3] + w[4]);
    if (w[joint_global] < 0) w[joint_global] = 0;
    for (int j = 0; j < joint_count; ++j) model.skinning_weights(v, j) = w[j];
  }

  // landmarks: greedy nearest unused frontal vertex
  std::set<int> used;
  for (const auto& lm : reduced_landmark_table()) {
    const vec2 target = reduced_frontal_position(lm).cwiseProduct(vec2(face_scale_x, face_scale_y));
    int    best   = -1;
    double best_d = 1e300;
    for (int v = 0; v < n; ++v) {
      if (dirs[v].z() > -0.3 || used.count(v)) continue;
      const double d = std::hypot(base[v].x() - target.x(), base[v].y() - target.y());
      if (d < best_d) {
        best_d = d;
        best   = v;
      }
    }
    if (best < 0) throw_invalid("template too coarse to place landmark " + std::to_string(lm.id));
    used.insert(best);
    model.anthropometric_map[lm.id] = best;
  }
  model.validate();
  return model;
}

namespace {

constexpr char model_magic[4] = {'C', 'F', 'M', '1'};

template <typename T>
void write_pod(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& path) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw_parse(path + ": truncated model file");
  return value;
}

}  // namespace

void write_model(const face_model& model, const std::string& path) {
  model.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw_io("cannot open " + path + " for writing");
  const auto n = static_cast<std::uint32_t>(model.vertex_count());
  out.write(model_magic, 4);
  write_pod<std::uint32_t>(out, 1);  // version
  write_pod<std::uint32_t>(out, n);
  write_pod<std::uint32_t>(out, shape_dim);
  write_pod<std::uint32_t>(out, expression_dim);
  write_pod<std::uint32_t>(out, joint_count - 1);  // K
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(model.mean_shape.triangles.size()));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(model.mean_shape.topology_id.size()));
  out.write(model.mean_shape.topology_id.data(),
      static_cast<std::streamsize>(model.mean_shape.topology_id.size()));
  for (const auto& v : model.mean_shape.vertices)
    for (int d = 0; d < 3; ++d) write_pod<double>(out, v[d]);
  for (const auto* basis : {&model.shape_basis, &model.expression_basis})
    for (Eigen::Index r = 0; r < basis->rows(); ++r)
      for (Eigen::Index c = 0; c < basis->cols(); ++c) write_pod<double>(out, (*basis)(r, c));
  for (const auto& p : model.joint_pivots)
    for (int d = 0; d < 3; ++d) write_pod<double>(out, p[d]);
  for (Eigen::Index r = 0; r < model.skinning_weights.rows(); ++r)
    for (int c = 0; c < joint_count; ++c) write_pod<double>(out, model.skinning_weights(r, c));
  for (auto parent : model.joint_parents) write_pod<std::int32_t>(out, parent);
  for (const auto& t : model.mean_shape.triangles)
    for (auto idx : t) write_pod<std::int32_t>(out, idx);
  if (!out) throw_io("failed writing " + path);
}

face_model read_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_io("cannot open model file " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, model_magic, 4) != 0) throw_parse(path + ": bad magic, expected CFM1");
  const auto version = read_pod<std::uint32_t>(in, path);
  if (version != 1) throw_parse(path + ": unsupported model version " + std::to_string(version));
  const auto n       = read_pod<std::uint32_t>(in, path);
  const auto n_shape = read_pod<std::uint32_t>(in, path);
  const auto n_expr  = read_pod<std::uint32_t>(in, path);
  const auto k       = read_pod<std::uint32_t>(in, path);
  const auto n_tri   = read_pod<std::uint32_t>(in, path);
  const auto id_len  = read_pod<std::uint32_t>(in, path);
  if (n_shape != shape_dim || n_expr != expression_dim || k != joint_count - 1) {
    throw_parse(path + ": model counts (" + std::to_string(n_shape) + ", " + std::to_string(n_expr) +
                ", K=" + std::to_string(k) + ") do not match the 228-entry code layout");
  }
  if (id_len > 4096) throw_parse(path + ": topology id too long");
  face_model model;
  model.mean_shape.topology_id.resize(id_len);
  in.read(model.mean_shape.topology_id.data(), id_len);
  model.mean_shape.vertices.resize(n);
  for (auto& v : model.mean_shape.vertices)
    for (int d = 0; d < 3; ++d) v[d] = read_pod<double>(in, path);
  model.shape_basis.resize(3 * n, n_shape);
  model.expression_basis.resize(3 * n, n_expr);
  for (auto* basis : {&model.shape_basis, &model.expression_basis})
    for (Eigen::Index r = 0; r < basis->rows(); ++r)
      for (Eigen::Index c = 0; c < basis->cols(); ++c) (*basis)(r, c) = read_pod<double>(in, path);
  for (auto& p : model.joint_pivots)
    for (int d = 0; d < 3; ++d) p[d] = read_pod<double>(in, path);
  model.skinning_weights.resize(n, joint_count);
  for (Eigen::Index r = 0; r < model.skinning_weights.rows(); ++r)
    for (int c = 0; c < joint_count; ++c) model.skinning_weights(r, c) = read_pod<double>(in, path);
  for (auto& parent : model.joint_parents) parent = read_pod<std::int32_t>(in, path);
  model.mean_shape.triangles.resize(n_tri);
  for (auto& t : model.mean_shape.triangles)
    for (auto& idx : t) idx = read_pod<std::int32_t>(in, path);
  model.validate();
  return model;
}

void write_anthropometric_map(const std::map<int, int>& map, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw_io("cannot open " + path + " for writing");
  for (const auto& [id, v] : map) out << id << ' ' << v << '\n';
}

std::map<int, int> read_anthropometric_map(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw_io("cannot open landmark map " + path);
  std::map<int, int> map;
  std::string        line;
  int                line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    int                id = 0, v = 0;
    if (!(ls >> id >> v)) throw_parse(path + ":" + std::to_string(line_no) + ": expected 'landmark_id vertex_index'");
    if (!map.emplace(id, v).second) {
      throw_parse(path + ":" + std::to_string(line_no) + ": duplicate landmark id " + std::to_string(id));
    }
  }
  return map;
}

}  // namespace craniofit
