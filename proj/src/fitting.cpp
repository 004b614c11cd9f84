#include "craniofit/fitting.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

#include "craniofit/error.hpp"
#include "craniofit/landmark_layout.hpp"
#include "craniofit/rotation.hpp"

namespace craniofit {

void landmark_set::validate(bool reduced) const {
  if (ids.size() != points.size()) throw_invalid("landmark ids and points differ in length");
  std::set<int> seen;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!seen.insert(ids[i]).second) throw_invalid("duplicate landmark id " + std::to_string(ids[i]));
    if (!points[i].allFinite()) throw_invalid("landmark " + std::to_string(ids[i]) + " is not finite");
  }
  if (!reduced) return;
  if (ids.size() != reduced_landmark_count) {
    throw_invalid("expected " + std::to_string(reduced_landmark_count) + " landmarks, got " +
                  std::to_string(ids.size()));
  }
  for (int id = 1; id <= reduced_landmark_count; ++id) {
    if (!seen.count(id)) throw_invalid("landmark id " + std::to_string(id) + " missing");
  }
}

const vec2& landmark_set::at(int id) const {
  const auto it = std::find(ids.begin(), ids.end(), id);
  if (it == ids.end()) throw_invalid("landmark id " + std::to_string(id) + " missing");
  return points[static_cast<std::size_t>(it - ids.begin())];
}

landmark_set read_landmarks(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw_io("cannot open landmark file " + path);
  landmark_set set;
  std::string  line;
  int          line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    int                id;
    double             x, y;
    std::string        extra;
    if (!(ls >> id >> x >> y) || (ls >> extra)) {
      throw_parse(path + ":" + std::to_string(line_no) + ": expected 'id x y'");
    }
    if (std::find(set.ids.begin(), set.ids.end(), id) != set.ids.end()) {
      throw_parse(path + ":" + std::to_string(line_no) + ": duplicate landmark id " + std::to_string(id));
    }
    set.ids.push_back(id);
    set.points.emplace_back(x, y);
  }
  return set;
}

void write_landmarks(const landmark_set& set, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw_io("cannot open " + path + " for writing");
  out << std::setprecision(17);
  for (std::size_t i = 0; i < set.size(); ++i) {
    out << set.ids[i] << ' ' << set.points[i].x() << ' ' << set.points[i].y() << '\n';
  }
  if (!out) throw_io("failed writing " + path);
}

landmark_set reduce_landmarks(const landmark_set& detected) {
  detected.validate(false);
  if (detected.size() == reduced_landmark_count) {
    detected.validate(true);
    return detected;
  }
  if (detected.size() != detected_landmark_count) {
    throw_invalid("landmark set must hold 66 detector points or 46 reduced points, got " +
                  std::to_string(detected.size()));
  }
  landmark_set out;
  out.source = detected.source;
  for (const auto& lm : reduced_landmark_table()) {
    vec2 sum = vec2::Zero();
    for (int s : lm.sources) sum += detected.at(s);
    out.ids.push_back(lm.id);
    out.points.push_back(sum / static_cast<double>(lm.sources.size()));
  }
  return out;
}

landmark_set render_landmarks(const face_model& model, const semantic_code& code,
    const camera_intrinsics& intrinsics) {
  landmark_set     out;
  std::vector<int> verts;
  for (const auto& [id, v] : model.anthropometric_map) {
    out.ids.push_back(id);
    verts.push_back(v);
  }
  out.points = project_vertices(model, code, intrinsics, verts);
  out.source = "synthetic-render";
  return out;
}

void fit_config::validate() const {
  if (!(w_m > 0)) throw_invalid("fit.w_m must be positive");
  if (!(w_r >= 0)) throw_invalid("fit.w_r must be non-negative");
  descent.validate();
  intrinsics.validate();
}

fit_config default_fit_config(const face_model& model) {
  fit_config cfg;
  cfg.intrinsics = canonical_setup_for(model).intrinsics;
  cfg.descent.max_iters = 500;
  cfg.descent.tolerance = 1e-6;
  return cfg;
}

semantic_code default_initial_code(const face_model& model) {
  const auto    setup = canonical_setup_for(model);
  semantic_code code;
  code.camera_rotation()    = setup.rotation;
  code.camera_translation() = setup.translation;
  code.gamma()              = setup.gamma;
  return code;
}

namespace {

void check_pairing(const landmark_set& p, const landmark_set& p_prime, const landmark_graph& graph) {
  if (graph.points.size() != p.size()) throw_invalid("landmark graph was not built on P");
  std::vector<int> missing;
  for (int id : p.ids) {
    if (std::find(p_prime.ids.begin(), p_prime.ids.end(), id) == p_prime.ids.end()) missing.push_back(id);
  }
  if (!missing.empty()) {
    std::string list;
    for (int id : missing) list += (list.empty() ? "" : ", ") + std::to_string(id);
    throw_invalid("landmark ids missing from P': " + list);
  }
}

double regularizer(const semantic_code& code) { return code.geometry().squaredNorm(); }

// Trial points that push a landmark behind the camera count as infinitely
// bad so the line search backs off instead of failing.
template <typename F>
double guarded(F&& evaluate_loss) {
  try {
    return evaluate_loss();
  } catch (const error& e) {
    if (e.kind() != error_kind::invalid) throw;
    return std::numeric_limits<double>::infinity();
  }
}

std::vector<int> landmark_vertices(const face_model& model, const landmark_set& target) {
  std::vector<int> verts;
  for (int id : target.ids) {
    const auto it = model.anthropometric_map.find(id);
    if (it == model.anthropometric_map.end()) {
      throw_invalid("landmark id " + std::to_string(id) + " has no model vertex");
    }
    verts.push_back(it->second);
  }
  return verts;
}

}  // namespace

// Rows d(pixel)/dx for the x and y coordinate of every listed vertex.
Eigen::MatrixXd landmark_jacobian(const face_model& model, const std::vector<int>& verts,
    const semantic_code& code, const fit_config& cfg) {
  Eigen::MatrixXd jp(2 * verts.size(), code_dim);
  for (std::size_t i = 0; i < verts.size(); ++i) {
    for (int c = 0; c < 2; ++c) {
      output_gradient g{verts[i], vec2::Zero(), vec3::Zero()};
      g.d_pixel[c] = 1.0;
      jp.row(2 * static_cast<Eigen::Index>(i) + c) =
          backward(model, code, cfg.intrinsics, std::span<const output_gradient>(&g, 1)).transpose();
    }
  }
  return jp;
}

// Curvature proxy 2 w_m |d landmarks / dx_i|^2 per variable, plus the
// regularizer on G, at a fixed starting code.
Eigen::VectorXd curvature_proxy(const face_model& model, const std::vector<int>& verts,
    const semantic_code& code, const fit_config& cfg) {
  Eigen::VectorXd h = 2.0 * cfg.w_m * landmark_jacobian(model, verts, code, cfg).colwise().squaredNorm().transpose();
  h.head<geometry_dim>().array() += 2.0 * cfg.w_r;
  return h;
}

// Gradient descent in y = (x - x0) / d with d_i = 1 / sqrt(h_i) (1 where h_i = 0).
// Every accepted step is still an Armijo step on the original objective.
descent_result minimize_scaled(const objective_fn& f, const Eigen::VectorXd& x0,
    const Eigen::VectorXd& h, const descent_options& options) {
  Eigen::VectorXd d(h.size());
  for (Eigen::Index i = 0; i < h.size(); ++i) d[i] = h[i] > 0 ? 1.0 / std::sqrt(h[i]) : 1.0;
  // y holds the scaled displacement from x0
  objective_fn in_y = [&](const Eigen::VectorXd& y, Eigen::VectorXd& grad) {
    const double v = f(x0 + y.cwiseProduct(d), grad);
    grad           = grad.cwiseProduct(d);
    return v;
  };
  auto out = minimize(in_y, Eigen::VectorXd::Zero(x0.size()), options);
  out.x    = x0 + out.x.cwiseProduct(d);
  return out;
}

// Skinning weights sum to one, so the posed mesh is R_g (q - c) + c with q
// posed at zero global rotation and c the global pivot.
semantic_code move_head_rotation_to_camera(const face_model& model, const semantic_code& code) {
  semantic_code out    = code;
  const vec3    omega  = code.theta().segment<3>(3 * joint_global);
  const mat3    r_g    = rodrigues(omega);
  const mat3    cam    = rodrigues(code.camera_rotation());
  const vec3    pivot  = model.joint_pivots[joint_global];
  out.theta().segment<3>(3 * joint_global).setZero();
  out.camera_rotation()    = rotation_log(r_g.transpose() * cam);
  out.camera_translation() = pivot + r_g.transpose() * (vec3(code.camera_translation()) - pivot);
  return out;
}

double landmark_rms(const landmark_set& a, const landmark_set& b, bool rigid_align) {
  if (a.ids != b.ids) throw_invalid("landmark sets must list the same ids in the same order");
  if (a.size() == 0) throw_invalid("landmark sets are empty");
  const auto n = static_cast<double>(a.size());
  vec2       ca = vec2::Zero(), cb = vec2::Zero();
  Eigen::Matrix2d rot = Eigen::Matrix2d::Identity();
  if (rigid_align) {
    for (std::size_t i = 0; i < a.size(); ++i) {
      ca += a.points[i] / n;
      cb += b.points[i] / n;
    }
    double dot = 0, cross = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const vec2 p = a.points[i] - ca, q = b.points[i] - cb;
      dot += p.dot(q);
      cross += p.x() * q.y() - p.y() * q.x();
    }
    const double angle = std::atan2(cross, dot);
    rot << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
  }
  double sum = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sum += (rot * (a.points[i] - ca) + cb - b.points[i]).squaredNorm();
  }
  return std::sqrt(sum / n);
}

loss_terms geometric_loss(const landmark_set& p, const landmark_set& p_prime,
    const landmark_graph& graph, const semantic_code& code, const fit_config& cfg) {
  check_pairing(p, p_prime, graph);
  std::vector<vec2> q(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) q[i] = p_prime.at(p.ids[i]);
  loss_terms out;
  for (const auto& [a, b] : graph.edges) {
    const double d = (p.points[a] - p.points[b]).norm() - (q[a] - q[b]).norm();
    out.e_m += d * d;
  }
  out.e_r   = regularizer(code);
  out.total = cfg.w_m * out.e_m + cfg.w_r * out.e_r;
  return out;
}

loss_terms fit_objective(const face_model& model, const landmark_set& target,
    const landmark_graph& graph, const semantic_code& code, const fit_config& cfg,
    Eigen::VectorXd* gradient) {
  const auto verts = landmark_vertices(model, target);
  const auto q = project_vertices(model, code, cfg.intrinsics, verts);

  loss_terms        out;
  std::vector<vec2> dq(q.size(), vec2::Zero());
  for (const auto& [a, b] : graph.edges) {
    const vec2   e1 = q[a] - q[b];
    const double l1 = e1.norm();
    const double d  = (target.points[a] - target.points[b]).norm() - l1;
    out.e_m += d * d;
    if (gradient && l1 > 0) {
      const vec2 g = -2.0 * cfg.w_m * d * e1 / l1;
      dq[a] += g;
      dq[b] -= g;
    }
  }
  out.e_r   = regularizer(code);
  out.total = cfg.w_m * out.e_m + cfg.w_r * out.e_r;

  if (gradient) {
    std::vector<output_gradient> grads;
    grads.reserve(verts.size());
    for (std::size_t i = 0; i < verts.size(); ++i) grads.push_back({verts[i], dq[i], vec3::Zero()});
    *gradient = backward(model, code, cfg.intrinsics, grads);
    gradient->head<geometry_dim>() += 2.0 * cfg.w_r * code.geometry();
  }
  return out;
}

fit_result fit_single(const face_model& model, const landmark_set& landmarks,
    const fit_config& cfg, const semantic_code& init) {
  cfg.validate();
  const landmark_set target = reduce_landmarks(landmarks);
  const auto         graph  = delaunay(target.points);

  auto objective = [&](const Eigen::VectorXd& x, Eigen::VectorXd& grad) {
    semantic_code code;
    code.values = x;
    return guarded([&] { return fit_objective(model, target, graph, code, cfg, &grad).total; });
  };
  const Eigen::VectorXd h = curvature_proxy(model, landmark_vertices(model, target), init, cfg);
  descent_result        r;
  try {
    r = minimize_scaled(objective, init.values, h, cfg.descent);
  } catch (const error& e) {
    if (e.kind() == error_kind::numerical) throw_numerical(std::string("fit: ") + e.what());
    throw;
  }
  fit_result out;
  out.code.values = r.x;
  out.loss        = fit_objective(model, target, graph, out.code, cfg);
  out.iterations  = r.iterations;
  out.converged   = r.converged;
  out.stop_reason = r.stop_reason;
  out.loss_curve  = std::move(r.trace);
  return out;
}

multi_fit_result fit_multi(const face_model& model, const std::vector<landmark_set>& sets,
    const fit_config& cfg, const semantic_code& init) {
  if (sets.empty()) throw_invalid("fit_multi needs at least one landmark set");
  cfg.validate();
  const int m = static_cast<int>(sets.size());

  multi_fit_result out;
  for (const auto& s : sets) out.stage_one.push_back(fit_single(model, s, cfg, init));

  if (m == 1) {
    const auto& r  = out.stage_one.front();
    out.geometry   = r.code.geometry();
    out.codes      = {r.code};
    out.per_image  = {r.loss};
    out.total_loss = r.loss.total;
    out.iterations = r.iterations;
    out.converged  = r.converged;
    out.loss_curve = r.loss_curve;
    return out;
  }

  std::vector<landmark_set>   targets;
  std::vector<landmark_graph> graphs;
  for (const auto& s : sets) {
    targets.push_back(reduce_landmarks(s));
    graphs.push_back(delaunay(targets.back().points));
  }

  // x = (G, R_1, ..., R_m)
  Eigen::VectorXd x0(geometry_dim + rendering_dim * m);
  Eigen::VectorXd mean_g = Eigen::VectorXd::Zero(geometry_dim);
  std::vector<semantic_code> starts;
  for (const auto& r : out.stage_one) {
    starts.push_back(move_head_rotation_to_camera(model, r.code));
    mean_g += starts.back().geometry();
  }
  x0.head<geometry_dim>() = mean_g / m;
  for (int j = 0; j < m; ++j) x0.segment<rendering_dim>(geometry_dim + rendering_dim * j) = starts[j].rendering();

  auto code_for = [&](const Eigen::VectorXd& x, int j) {
    semantic_code c;
    c.geometry()  = x.head<geometry_dim>();
    c.rendering() = x.segment<rendering_dim>(geometry_dim + rendering_dim * j);
    return c;
  };
  auto objective = [&](const Eigen::VectorXd& x, Eigen::VectorXd& grad) {
    grad.setZero(x.size());
    return guarded([&] {
      double total = 0;
      for (int j = 0; j < m; ++j) {
        Eigen::VectorXd g;
        total += fit_objective(model, targets[j], graphs[j], code_for(x, j), cfg, &g).total;
        grad.head<geometry_dim>() += g.head<geometry_dim>();
        grad.segment<rendering_dim>(geometry_dim + rendering_dim * j) += g.tail<rendering_dim>();
      }
      return total;
    });
  };
  // The stage-1 rendering blocks belong to each image's own G; re-seat them
  // on the averaged G before the joint descent.
  for (int j = 0; j < m; ++j) {
    const semantic_code base = code_for(x0, j);
    auto rendering_only = [&](const Eigen::VectorXd& rj, Eigen::VectorXd& grad) {
      semantic_code c = base;
      c.rendering()   = rj;
      Eigen::VectorXd g;
      const double    v = guarded([&] { return fit_objective(model, targets[j], graphs[j], c, cfg, &g).total; });
      grad = std::isfinite(v) ? Eigen::VectorXd(g.tail<rendering_dim>()) : Eigen::VectorXd::Zero(rendering_dim);
      return v;
    };
    const Eigen::VectorXd hj = curvature_proxy(model, landmark_vertices(model, targets[j]), base, cfg).tail<rendering_dim>();
    x0.segment<rendering_dim>(geometry_dim + rendering_dim * j) = minimize_scaled(rendering_only, base.rendering(), hj, cfg.descent).x;
  }

  // Curvature of G accumulates over images; each R_j sees only its image.
  Eigen::VectorXd h = Eigen::VectorXd::Zero(x0.size());
  for (int j = 0; j < m; ++j) {
    const Eigen::VectorXd hj = curvature_proxy(model, landmark_vertices(model, targets[j]), code_for(x0, j), cfg);
    h.head<geometry_dim>() += hj.head<geometry_dim>();
    h.segment<rendering_dim>(geometry_dim + rendering_dim * j) = hj.tail<rendering_dim>();
  }
  descent_result r;
  try {
    r = minimize_scaled(objective, x0, h, cfg.descent);
  } catch (const error& e) {
    if (e.kind() == error_kind::numerical) throw_numerical(std::string("fit_multi: ") + e.what());
    throw;
  }
  out.geometry   = r.x.head<geometry_dim>();
  out.total_loss = r.value;
  out.iterations = r.iterations;
  out.converged  = r.converged;
  out.loss_curve = std::move(r.trace);
  for (int j = 0; j < m; ++j) {
    out.codes.push_back(code_for(r.x, j));
    out.per_image.push_back(fit_objective(model, targets[j], graphs[j], out.codes.back(), cfg));
  }
  return out;
}

fitting_encoder::fitting_encoder(const face_model& model, fit_config cfg)
    : model_(model), cfg_(std::move(cfg)) {
  cfg_.validate();
}

semantic_code fitting_encoder::encode(const landmark_set& landmarks) const {
  return fit_single(model_, landmarks, cfg_, default_initial_code(model_)).code;
}

}  // namespace craniofit
