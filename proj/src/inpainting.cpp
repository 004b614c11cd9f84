#include "craniofit/inpainting.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <random>
#include <sstream>

#include <Eigen/Dense>

#include "craniofit/error.hpp"
#include "craniofit/mesh_io.hpp"

namespace craniofit {

std::set<int> select_unmatched_regions(const segmentation& seg, const superimposition_result& sup,
    removal_policy policy) {
  std::map<int, std::pair<int, int>> counts;  // region -> (scored, unmatched)
  for (const auto& row : sup.rows) {
    auto& c = counts[seg.region_of_landmark(row.id)];
    ++c.first;
    if (!row.matched) ++c.second;
  }
  std::set<int> removed;
  for (const auto& [region, c] : counts) {
    const bool drop = policy == removal_policy::any ? c.second >= 1 : 2 * c.second > c.first;
    if (drop) removed.insert(region);
  }
  return removed;
}

masked_render build_mask(const face_model& model, const semantic_code& code,
    const std::set<int>& removed_regions, const segmentation& seg) {
  seg.validate(model);
  for (int r : removed_regions) seg.region(r);
  masked_render out;
  out.y = normalize_render_geometry(model, code.geometry());
  out.B = mask_image(out.y.width(), out.y.height(), 1);
  const auto  removed = seg.vertices_in(removed_regions);
  const auto& tris    = model.mean_shape.triangles;
  for (std::size_t p = 0; p < out.y.coverage.size(); ++p) {
    const int t = out.y.coverage[p];
    if (t < 0) continue;
    const auto& f = tris[t];
    if (removed[f[0]] && removed[f[1]] && removed[f[2]]) out.B.values[p] = 0;
  }
  return out;
}

std::vector<double> importance_weights(const mask_image& B, int window) {
  if (window < 3 || window % 2 == 0) throw_invalid("window size must be odd and at least 3");
  const int           r = window / 2;
  std::vector<double> W(B.values.size(), 0.0);
  for (int y = 0; y < B.height; ++y) {
    for (int x = 0; x < B.width; ++x) {
      if (!B.at(x, y)) continue;
      int count = 0, missing = 0;
      for (int j = std::max(0, y - r); j <= std::min(B.height - 1, y + r); ++j) {
        for (int i = std::max(0, x - r); i <= std::min(B.width - 1, x + r); ++i) {
          if (i == x && j == y) continue;
          ++count;
          missing += B.at(i, j) ? 0 : 1;
        }
      }
      if (count > 0) W[static_cast<std::size_t>(y) * B.width + x] = static_cast<double>(missing) / count;
    }
  }
  return W;
}

double context_loss(const rgb_image& g, const rgb_image& y, const std::vector<double>& W, rgb_image* gradient) {
  if (g.width != y.width || g.height != y.height) {
    throw_invalid("context loss: generated image is " + std::to_string(g.width) + "x" + std::to_string(g.height) +
                  ", target is " + std::to_string(y.width) + "x" + std::to_string(y.height));
  }
  if (W.size() != g.pixel_count()) throw_invalid("context loss: weight map size differs from the image");
  if (gradient) *gradient = rgb_image(g.width, g.height);
  double sum = 0;
  for (std::size_t p = 0; p < W.size(); ++p) {
    if (W[p] == 0) continue;
    for (int c = 0; c < 3; ++c) {
      const double d = g.pixels[p * 3 + c] - y.pixels[p * 3 + c];
      sum += W[p] * std::abs(d);
      if (gradient) gradient->pixels[p * 3 + c] = d > 0 ? W[p] : (d < 0 ? -W[p] : 0.0);
    }
  }
  return sum;
}

namespace {

void check_score(double d) {
  if (!(d > 0 && d < 1)) {
    std::ostringstream os;
    os << std::setprecision(17) << "discriminator score " << d << " is outside (0, 1)";
    throw_contract(os.str());
  }
}

}  // namespace

double prior_loss(double discriminator_score, double lambda_p) {
  check_score(discriminator_score);
  if (lambda_p == 0) return 0;
  return lambda_p * std::log1p(-discriminator_score);
}

double prior_loss_derivative(double discriminator_score, double lambda_p) {
  check_score(discriminator_score);
  return -lambda_p / (1 - discriminator_score);
}

void geometry_constraints::validate(const face_model& model) const {
  if (size() == 0) throw_invalid("geometry constraints are empty");
  for (const auto& [id, p] : landmarks) {
    if (!model.anthropometric_map.count(id)) {
      throw_invalid("constraint landmark " + std::to_string(id) + " is not in the model's landmark map");
    }
    if (!p.allFinite()) throw_invalid("constraint landmark " + std::to_string(id) + " is not finite");
  }
  for (int v : definite_vertices) {
    if (v < 0 || v >= model.vertex_count()) {
      throw_invalid("definite constraint vertex " + std::to_string(v) + " is out of range");
    }
  }
}

geometry_constraints make_geometry_constraints(const skull_annotation& skull, const tissue_table& depths,
    const segmentation& seg) {
  geometry_constraints c;
  c.landmarks        = extend_landmarks(skull, depths);
  c.definite_surface = std::make_shared<offset_surface>(skull.skull, depths.at(1).depth);
  const auto flags   = seg.definite_vertices();
  for (std::size_t v = 0; v < flags.size(); ++v)
    if (flags[v]) c.definite_vertices.push_back(static_cast<int>(v));
  return c;
}

std::vector<geometry_residual> geometry_residuals(const mesh& face, const face_model& model,
    const geometry_constraints& constraints) {
  constraints.validate(model);
  if (face.vertex_count() != model.vertex_count()) throw_invalid("geometry loss: face has the wrong vertex count");
  std::vector<geometry_residual> out;
  out.reserve(constraints.size());
  for (const auto& [id, target] : constraints.landmarks) {
    const int    v = model.anthropometric_map.at(id);
    const vec3   r = face.vertices[v] - target;
    const double d = r.norm();
    out.push_back({v, d > 0 ? vec3(r / d) : vec3::Zero(), d, true});
  }
  if (constraints.definite_surface) {
    const auto&  index  = constraints.definite_surface->index();
    const double offset = constraints.definite_surface->offset();
    const auto&  sv     = index.surface().vertices;
    for (int v : constraints.definite_vertices) {
      const vec3& q      = face.vertices[v];
      const auto  hit    = index.query(q);
      const vec3  before = q - hit.point;
      const auto& tr     = index.surface().triangles[hit.triangle];
      vec3        n      = (sv[tr[1]] - sv[tr[0]]).cross(sv[tr[2]] - sv[tr[0]]);
      n                  = n.norm() > 0 ? vec3(n.normalized()) : vec3::UnitZ();
      const bool   outside  = before.dot(n) >= 0;
      const double signed_d = outside ? hit.distance - offset : -hit.distance - offset;
      const vec3   dir      = hit.distance > 1e-12 ? vec3(before / hit.distance) : n;
      // Outside and short of the offset, the distance shrinks along dir.
      const double sign = (outside && signed_d < 0) ? -1.0 : 1.0;
      out.push_back({v, signed_d == 0 ? vec3::Zero() : vec3(sign * dir), std::abs(signed_d), false});
    }
  }
  return out;
}

double geometry_loss(const mesh& face, const face_model& model, const geometry_constraints& constraints,
    double lambda_2, std::vector<vertex_gradient>* gradients) {
  double sum = 0;
  for (const auto& r : geometry_residuals(face, model, constraints)) {
    sum += r.size;
    if (gradients && r.size > 0) gradients->push_back({r.vertex, lambda_2 * r.direction});
  }
  return lambda_2 * sum;
}

Eigen::VectorXd image_generator::code_backward(const Eigen::VectorXd& z, const Eigen::VectorXd& d_code) const {
  constexpr double h = 1e-6;
  Eigen::VectorXd  g(z.size());
  Eigen::VectorXd  zp = z;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    zp[i]            = z[i] + h;
    const auto plus  = code(zp);
    zp[i]            = z[i] - h;
    const auto minus = code(zp);
    zp[i]            = z[i];
    g[i]             = d_code.dot(plus - minus) / (2 * h);
  }
  return g;
}

affine_generator::affine_generator(face_model model, Eigen::MatrixXd A, Eigen::VectorXd b)
    : model_(std::move(model)), A_(std::move(A)), b_(std::move(b)) {
  model_.validate();
  if (A_.rows() != geometry_dim || b_.size() != geometry_dim) throw_invalid("affine generator needs 195-row maps");
  if (A_.cols() < 1) throw_invalid("affine generator needs a positive latent dimension");
}

namespace {

void check_latent(const Eigen::VectorXd& z, Eigen::Index dim) {
  if (z.size() != dim) {
    throw_contract("latent has " + std::to_string(z.size()) + " entries, generator expects " + std::to_string(dim));
  }
  if (!z.allFinite()) throw_numerical("latent is not finite");
}

}  // namespace

Eigen::VectorXd affine_generator::code(const Eigen::VectorXd& z) const {
  check_latent(z, A_.cols());
  return A_ * z + b_;
}

Eigen::VectorXd affine_generator::code_backward(const Eigen::VectorXd& z, const Eigen::VectorXd& d_code) const {
  check_latent(z, A_.cols());
  return A_.transpose() * d_code;
}

rendered_image affine_generator::generate(const Eigen::VectorXd& z) const {
  return normalize_render_geometry(model_, code(z));
}

rendered_image affine_generator::generate_fixed(const Eigen::VectorXd& z, const rendered_image& structure) const {
  const auto c = canonical_code(model_, code(z));
  return render_fixed_coverage(model_, c, canonical_setup_for(model_).intrinsics, structure);
}

Eigen::VectorXd affine_generator::backward(const Eigen::VectorXd& z, const rendered_image& structure,
    const rgb_image& pixel_gradient) const {
  return A_.transpose() * normalize_render_backward(model_, code(z), structure, pixel_gradient);
}

Eigen::VectorXd affine_generator::latent_of(const Eigen::VectorXd& geometry) const {
  return A_.colPivHouseholderQr().solve(geometry - b_);
}

Eigen::VectorXd pooled_features(const rgb_image& image, int cell) {
  if (cell < 1) throw_invalid("pooling cell must be positive");
  const int       cw = (image.width + cell - 1) / cell;
  const int       ch = (image.height + cell - 1) / cell;
  Eigen::VectorXd f  = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(cw) * ch * 3);
  for (int cy = 0; cy < ch; ++cy) {
    for (int cx = 0; cx < cw; ++cx) {
      const int x1 = std::min(image.width, (cx + 1) * cell), y1 = std::min(image.height, (cy + 1) * cell);
      const int n  = (x1 - cx * cell) * (y1 - cy * cell);
      for (int y = cy * cell; y < y1; ++y)
        for (int x = cx * cell; x < x1; ++x)
          for (int c = 0; c < 3; ++c) f[(cy * cw + cx) * 3 + c] += image.at(x, y, c);
      for (int c = 0; c < 3; ++c) f[(cy * cw + cx) * 3 + c] /= n;
    }
  }
  return f;
}

readout_discriminator::readout_discriminator(Eigen::MatrixXd readout, Eigen::VectorXd feature_mean, int cell,
    int width, int height)
    : P_(std::move(readout)), mean_(std::move(feature_mean)), cell_(cell), width_(width), height_(height) {
  const Eigen::Index cells = static_cast<Eigen::Index>((width + cell - 1) / cell) * ((height + cell - 1) / cell);
  if (P_.cols() != 3 * cells || mean_.size() != P_.cols()) {
    throw_invalid("readout discriminator: feature sizes disagree with the image layout");
  }
}

void readout_discriminator::check_size(const rgb_image& image) const {
  if (image.width != width_ || image.height != height_) {
    throw_contract("discriminator expects " + std::to_string(width_) + "x" + std::to_string(height_) + " images");
  }
}

Eigen::VectorXd readout_discriminator::latent(const rgb_image& image) const {
  check_size(image);
  return P_ * (pooled_features(image, cell_) - mean_);
}

namespace {

double logistic(double s) { return s >= 0 ? 1 / (1 + std::exp(-s)) : std::exp(s) / (1 + std::exp(s)); }

// Keeps the score representable inside (0, 1) for far-out images.
constexpr double score_floor = 1e-300;

}  // namespace

double readout_discriminator::score(const rgb_image& image) const {
  const auto zh = latent(image);
  const double q = zh.squaredNorm() / static_cast<double>(P_.rows());
  return std::max(logistic(-q), score_floor);
}

rgb_image readout_discriminator::gradient(const rgb_image& image) const {
  const auto      zh = latent(image);
  const double    d_dz = static_cast<double>(P_.rows());
  const double    q  = zh.squaredNorm() / d_dz;
  const double    D  = logistic(-q);
  rgb_image       g(width_, height_);
  if (D <= score_floor) return g;
  const Eigen::VectorXd df = (-D * (1 - D) * 2.0 / d_dz) * (P_.transpose() * zh);
  const int       cw = (width_ + cell_ - 1) / cell_;
  for (int y = 0; y < height_; ++y) {
    const int cy = y / cell_;
    const int y1 = std::min(height_, (cy + 1) * cell_);
    for (int x = 0; x < width_; ++x) {
      const int    cx = x / cell_;
      const int    x1 = std::min(width_, (cx + 1) * cell_);
      const double n  = static_cast<double>((x1 - cx * cell_) * (y1 - cy * cell_));
      for (int c = 0; c < 3; ++c) g.at(x, y, c) = df[(cy * cw + cx) * 3 + c] / n;
    }
  }
  return g;
}

reference_pair reference_gan(const face_model& model, const std::vector<semantic_code>& training_codes,
    int latent_dim, std::uint64_t seed) {
  constexpr int    min_codes  = 20;
  constexpr int    cell       = 8;
  constexpr int    extra_draw = 64;
  const int        n          = static_cast<int>(training_codes.size());
  if (n < min_codes) throw_invalid("reference generator needs at least 20 training codes, got " + std::to_string(n));
  if (latent_dim < 1 || latent_dim > geometry_dim) throw_invalid("latent dimension must be in [1, 195]");
  if (latent_dim > n - 1) throw_invalid("rank-deficient training set: latent dimension exceeds codes - 1");

  Eigen::MatrixXd X(n, geometry_dim);
  for (int i = 0; i < n; ++i) X.row(i) = training_codes[i].geometry().transpose();
  if (!X.allFinite()) throw_invalid("training codes contain non-finite values");
  const Eigen::VectorXd b  = X.colwise().mean().transpose();
  const Eigen::MatrixXd Xc = X.rowwise() - b.transpose();

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Xc, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto&  s   = svd.singularValues();
  const double tol = 1e-9 * std::max(1.0, s[0]);
  if (s[latent_dim - 1] <= tol) {
    throw_invalid("rank-deficient training set: only " + std::to_string((s.array() > tol).count()) +
                  " principal directions for latent dimension " + std::to_string(latent_dim));
  }
  const double          scale = std::sqrt(static_cast<double>(n - 1));
  const Eigen::MatrixXd A     = svd.matrixV().leftCols(latent_dim) * (s.head(latent_dim) / scale).asDiagonal();
  auto G = std::make_shared<affine_generator>(model, A, b);

  // Readout training set: the projected training codes plus prior draws.
  const int       m = n + extra_draw;
  Eigen::MatrixXd Z(m, latent_dim);
  Z.topRows(n) = svd.matrixU().leftCols(latent_dim) * scale;
  std::mt19937_64                  rng(seed);
  std::normal_distribution<double> normal;
  for (int i = n; i < m; ++i)
    for (int k = 0; k < latent_dim; ++k) Z(i, k) = normal(rng);

  const auto      setup = canonical_setup_for(model);
  const int       w = setup.intrinsics.width, h = setup.intrinsics.height;
  Eigen::MatrixXd F;
  for (int i = 0; i < m; ++i) {
    const Eigen::VectorXd f = pooled_features(G->generate(Z.row(i).transpose()).color, cell);
    if (i == 0) F.resize(m, f.size());
    F.row(i) = f.transpose();
  }
  const Eigen::VectorXd fmean = F.colwise().mean().transpose();
  const Eigen::MatrixXd Fc    = F.rowwise() - fmean.transpose();
  Eigen::MatrixXd       K     = Fc * Fc.transpose();
  const double          ridge = 1e-3 * K.trace() / m;
  K.diagonal().array() += ridge;
  const Eigen::MatrixXd P = (K.ldlt().solve(Z)).transpose() * Fc;

  auto D = std::make_shared<readout_discriminator>(P, fmean, cell, w, h);
  return {std::move(G), std::move(D)};
}

void inpaint_settings::validate() const {
  if (!(lambda_p >= 0) || !std::isfinite(lambda_p)) throw_invalid("lambda_p must be finite and non-negative");
  if (!(lambda_2 >= 0) || !std::isfinite(lambda_2)) throw_invalid("lambda_2 must be finite and non-negative");
  if (window < 3 || window % 2 == 0) throw_invalid("window size must be odd and at least 3");
  optimizer.validate();
}

void inpaint_problem::validate(const face_model& model) const {
  settings.validate();
  if (y.width != B.width || y.height != B.height) throw_invalid("mask and image sizes differ");
  if (y.pixels.size() != y.pixel_count() * 3 || B.values.size() != y.pixel_count()) {
    throw_invalid("image or mask buffer has the wrong size");
  }
  for (auto b : B.values)
    if (b > 1) throw_invalid("mask values must be 0 or 1");
  constraints.validate(model);
}

inpaint_objective::inpaint_objective(const inpaint_problem& problem, const image_generator& G,
    const image_discriminator& D, const face_model& model)
    : problem_(problem), G_(G), D_(D), model_(model) {
  problem_.validate(model_);
  W_ = importance_weights(problem_.B, problem_.settings.window);
}

namespace {

inpaint_terms compose(const inpaint_problem& problem, const image_generator& G, const image_discriminator& D,
    const face_model& model, const std::vector<double>& W, const Eigen::VectorXd& z,
    const rendered_image& image, const rendered_image& structure, Eigen::VectorXd* gradient) {
  const auto& s = problem.settings;
  inpaint_terms  t;
  rgb_image   pixel_grad;
  t.context          = context_loss(image.color, problem.y, W, gradient ? &pixel_grad : nullptr);
  const double score = D.score(image.color);
  t.prior            = prior_loss(score, s.lambda_p);

  const Eigen::VectorXd        code = G.code(z);
  std::vector<vertex_gradient> vgrads;
  t.geometry = geometry_loss(evaluate(model, code), model, problem.constraints, s.lambda_2,
      gradient ? &vgrads : nullptr);

  if (gradient) {
    if (s.lambda_p != 0) {
      const double    k  = prior_loss_derivative(score, s.lambda_p);
      const rgb_image dD = D.gradient(image.color);
      if (dD.pixels.size() != pixel_grad.pixels.size()) throw_contract("discriminator gradient has the wrong size");
      for (std::size_t i = 0; i < pixel_grad.pixels.size(); ++i) pixel_grad.pixels[i] += k * dD.pixels[i];
    }
    *gradient = G.backward(z, structure, pixel_grad);
    if (!vgrads.empty()) *gradient += G.code_backward(z, geometry_vjp(model, code, vgrads));
    if (gradient->size() != z.size()) throw_contract("generator gradient has the wrong size");
  }
  return t;
}

void check_generated(const rendered_image& image, const inpaint_problem& problem) {
  if (image.width() != problem.y.width || image.height() != problem.y.height) {
    throw_contract("generator output is " + std::to_string(image.width()) + "x" + std::to_string(image.height()) +
                   ", problem image is " + std::to_string(problem.y.width) + "x" + std::to_string(problem.y.height));
  }
}

}  // namespace

inpaint_terms inpaint_objective::evaluate(const Eigen::VectorXd& z, Eigen::VectorXd* gradient) const {
  const auto image = G_.generate(z);
  check_generated(image, problem_);
  return compose(problem_, G_, D_, model_, W_, z, image, image, gradient);
}

inpaint_terms inpaint_objective::evaluate_fixed(const Eigen::VectorXd& z, const rendered_image& structure,
    Eigen::VectorXd* gradient) const {
  const auto image = G_.generate_fixed(z, structure);
  check_generated(image, problem_);
  return compose(problem_, G_, D_, model_, W_, z, image, structure, gradient);
}

Eigen::VectorXd initial_latent(int latent_dim, std::uint64_t seed) {
  std::mt19937_64                        rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::VectorXd                        z(latent_dim);
  for (int i = 0; i < latent_dim; ++i) z[i] = u(rng);
  return z;
}

Eigen::MatrixXd geometry_metric(const geometry_constraints& constraints, const image_generator& G,
    const face_model& model, const Eigen::VectorXd& z, double floor) {
  const int       d = G.latent_dim();
  Eigen::MatrixXd Jc(geometry_dim, d);
  for (int i = 0; i < geometry_dim; ++i) Jc.row(i) = G.code_backward(z, Eigen::VectorXd::Unit(geometry_dim, i)).transpose();

  const Eigen::VectorXd code      = G.code(z);
  const auto            residuals = geometry_residuals(evaluate(model, code), model, constraints);
  std::vector<int>      verts;
  verts.reserve(residuals.size());
  for (const auto& r : residuals) verts.push_back(r.vertex);
  const Eigen::MatrixXd Jm = evaluate_jacobian(model, code.segment<shape_dim>(semantic_code::alpha_offset),
      code.segment<expression_dim>(semantic_code::delta_offset), code.segment<pose_dim>(semantic_code::theta_offset),
      verts);
  const Eigen::MatrixXd J = Jm * Jc;

  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(d, d);
  for (std::size_t i = 0; i < residuals.size(); ++i) {
    const auto&  r  = residuals[i];
    const auto   Ji = J.middleRows(3 * static_cast<Eigen::Index>(i), 3);
    const double w  = floor > 0 ? 1.0 / std::max(r.size, floor) : 1.0;
    if (r.isotropic || floor <= 0) {
      H.noalias() += w * Ji.transpose() * Ji;
    } else {
      const Eigen::RowVectorXd u = r.direction.transpose() * Ji;
      H.noalias() += w * u.transpose() * u;
    }
  }
  return H;
}

namespace {

// Newton-type direction -H^-1 g with a small relative ridge.
Eigen::VectorXd metric_direction(Eigen::MatrixXd H, const Eigen::VectorXd& g) {
  const double ridge = 1e-10 * std::max(H.trace() / static_cast<double>(H.rows()), 1e-300);
  H.diagonal().array() += ridge;
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
  if (ldlt.info() != Eigen::Success) throw_numerical("latent metric factorization failed");
  return -ldlt.solve(g);
}

}  // namespace

inpaint_result solve(const inpaint_problem& problem, const image_generator& G, const image_discriminator& D,
    const face_model& model) {
  return solve(problem, G, D, model, initial_latent(G.latent_dim(), problem.settings.seed));
}

inpaint_result solve(const inpaint_problem& problem, const image_generator& G, const image_discriminator& D,
    const face_model& model, const Eigen::VectorXd& z0) {
  constexpr double residual_floor = 1e-12;  // mm
  const inpaint_objective objective(problem, G, D, model);
  check_latent(z0, G.latent_dim());
  const auto&  opt     = problem.settings.optimizer;
  const double lambda2 = problem.settings.lambda_2;

  inpaint_result  result;
  Eigen::VectorXd z = z0, g, trial_g;
  inpaint_terms   terms = objective.evaluate(z, &g);
  if (!std::isfinite(terms.total()) || !g.allFinite()) throw_numerical("non-finite inpainting loss at z0");
  result.trace.push_back(terms);

  // Without the geometry term the unweighted constraint metric at z0 is a
  // fixed preconditioner and the step length adapts instead.
  const Eigen::MatrixXd H0    = geometry_metric(problem.constraints, G, model, z0, 0.0);
  const bool            irls  = lambda2 > 0;
  double                scale = 1.0;

  result.stop_reason = "iteration limit";
  for (int it = 1; it <= opt.max_iters; ++it) {
    const Eigen::MatrixXd H =
        irls ? Eigen::MatrixXd(lambda2 * geometry_metric(problem.constraints, G, model, z, residual_floor)) : H0;
    const Eigen::VectorXd dir   = metric_direction(H, g);
    const double          slope = g.dot(dir);
    if (!(slope < 0) || g.norm() <= opt.gradient_floor * std::max(1.0, std::abs(terms.total()))) {
      result.stop_reason = "gradient vanished";
      break;
    }
    double          t = irls ? 1.0 : std::min(2.0 * scale, opt.max_step_growth);
    Eigen::VectorXd trial;
    inpaint_terms   trial_terms;
    bool            accepted = false;
    for (int bt = 0; bt < opt.max_backtracks; ++bt) {
      trial       = z + t * dir;
      trial_terms = objective.evaluate(trial, &trial_g);
      if (std::isfinite(trial_terms.total()) && trial_terms.total() <= terms.total() + opt.armijo * t * slope) {
        accepted = true;
        break;
      }
      t *= opt.shrink;
    }
    if (!accepted) {
      result.stop_reason = "line search stalled";
      break;
    }
    if (!trial_g.allFinite()) throw_numerical("non-finite inpainting gradient at iteration " + std::to_string(it));
    scale                 = t;
    const double previous = terms.total();
    z                     = trial;
    g                     = trial_g;
    terms                 = trial_terms;
    result.trace.push_back(terms);
    result.iterations = it;
    if (std::abs(previous - terms.total()) <= opt.tolerance * std::max(std::abs(previous), 1e-300)) {
      result.stop_reason = "relative change below tolerance";
      break;
    }
  }

  result.z           = z;
  result.final_terms = terms;
  result.image       = G.generate(z);
  result.code        = canonical_code(model, G.code(z));
  result.face        = evaluate(model, result.code.geometry());
  return result;
}

double inpaint_gradient_error(const inpaint_objective& objective, const image_generator& G,
    const Eigen::VectorXd& z, double step) {
  const auto      structure = G.generate(z);
  Eigen::VectorXd analytic;
  objective.evaluate_fixed(z, structure, &analytic);
  const double scale = std::max(1.0, analytic.cwiseAbs().maxCoeff());
  double       worst = 0;
  Eigen::VectorXd zp = z;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    zp[i]             = z[i] + step;
    const double plus = objective.evaluate_fixed(zp, structure).total();
    zp[i]             = z[i] - step;
    const double minus = objective.evaluate_fixed(zp, structure).total();
    zp[i]             = z[i];
    const double fd   = (plus - minus) / (2 * step);
    worst             = std::max(worst, std::abs(fd - analytic[i]) / std::max(scale, std::abs(fd)));
  }
  return worst;
}

std::vector<int> frontal_vertices(const face_model& model) {
  std::vector<int> out;
  const auto&      v = model.mean_shape.vertices;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (v[i].z() < 0) out.push_back(static_cast<int>(i));
  return out;
}

void write_loss_trace(const std::vector<inpaint_terms>& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw_io("cannot open " + path + " for writing");
  out << "iter,total,Lc,Lp,Lg\n" << std::setprecision(17);
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const auto& t = trace[i];
    out << i << ',' << t.total() << ',' << t.context << ',' << t.prior << ',' << t.geometry << '\n';
  }
  if (!out) throw_io("failed writing " + path);
}

void write_problem_bundle(const inpaint_problem& problem, const std::string& directory) {
  namespace fs = std::filesystem;
  fs::create_directories(directory);
  const fs::path dir(directory);
  write_ppm(problem.y, (dir / "y.ppm").string());
  write_pgm(problem.B, (dir / "B.pgm").string());

  std::ofstream c(dir / "constraints.txt");
  if (!c) throw_io("cannot write constraints in " + directory);
  c << "# id x y z\n" << std::setprecision(17);
  for (const auto& [id, p] : problem.constraints.landmarks) c << id << ' ' << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';

  std::ofstream s(dir / "settings.txt");
  if (!s) throw_io("cannot write settings in " + directory);
  const auto& st = problem.settings;
  s << std::setprecision(17) << "lambda_p=" << st.lambda_p << "\nlambda_2=" << st.lambda_2 << "\nwindow=" << st.window
    << "\nseed=" << st.seed << "\nmax_iters=" << st.optimizer.max_iters << "\ntolerance=" << st.optimizer.tolerance
    << '\n';
  if (problem.constraints.definite_surface) {
    s << "definite_depth=" << problem.constraints.definite_surface->offset() << '\n';
    write_obj(problem.constraints.definite_surface->index().surface(), (dir / "skull.obj").string());
    std::ofstream d(dir / "definite.txt");
    for (int v : problem.constraints.definite_vertices) d << v << '\n';
    if (!d) throw_io("failed writing definite vertices in " + directory);
  }
  if (!c || !s) throw_io("failed writing bundle " + directory);
}

namespace {

double parse_number(const std::string& text, const std::string& where) {
  std::size_t used = 0;
  double      v    = 0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size() || text.empty()) throw_parse(where + ": '" + text + "' is not a number");
  return v;
}

}  // namespace

inpaint_problem read_problem_bundle(const std::string& directory) {
  namespace fs = std::filesystem;
  const fs::path  dir(directory);
  inpaint_problem p;
  p.y = read_ppm((dir / "y.ppm").string());
  p.B = read_pgm((dir / "B.pgm").string());
  for (auto& b : p.B.values) b = b ? 1 : 0;

  const std::string cpath = (dir / "constraints.txt").string();
  std::ifstream     c(cpath);
  if (!c) throw_io("cannot open " + cpath);
  std::string line;
  int         line_no = 0;
  while (std::getline(c, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    int                id;
    double             x, y, z;
    std::string        extra;
    if (!(ls >> id >> x >> y >> z) || (ls >> extra)) throw_parse(cpath + ":" + std::to_string(line_no) + ": expected 'id x y z'");
    if (!p.constraints.landmarks.emplace(id, vec3(x, y, z)).second) {
      throw_parse(cpath + ":" + std::to_string(line_no) + ": duplicate id " + std::to_string(id));
    }
  }

  const std::string spath = (dir / "settings.txt").string();
  std::ifstream     s(spath);
  if (!s) throw_io("cannot open " + spath);
  std::optional<double> definite_depth;
  line_no = 0;
  while (std::getline(s, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const std::string where = spath + ":" + std::to_string(line_no);
    const auto        eq    = line.find('=');
    if (eq == std::string::npos) throw_parse(where + ": expected key=value");
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    auto&             st  = p.settings;
    if (key == "seed") {
      std::size_t used = 0;
      try {
        st.seed = std::stoull(value, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != value.size()) throw_parse(where + ": seed must be a non-negative integer");
      continue;
    }
    const double v = parse_number(value, where);
    if (key == "lambda_p") st.lambda_p = v;
    else if (key == "lambda_2") st.lambda_2 = v;
    else if (key == "window") st.window = static_cast<int>(v);
    else if (key == "max_iters") st.optimizer.max_iters = static_cast<int>(v);
    else if (key == "tolerance") st.optimizer.tolerance = v;
    else if (key == "definite_depth") definite_depth = v;
    else throw_parse(where + ": unknown key '" + key + "'");
  }
  if (definite_depth) {
    p.constraints.definite_surface =
        std::make_shared<offset_surface>(read_obj((dir / "skull.obj").string()), *definite_depth);
    const std::string dpath = (dir / "definite.txt").string();
    std::ifstream     d(dpath);
    if (!d) throw_io("cannot open " + dpath);
    int v;
    while (d >> v) p.constraints.definite_vertices.push_back(v);
    if (!d.eof()) throw_parse(dpath + ": expected vertex indices");
  }
  p.settings.validate();
  return p;
}

}  // namespace craniofit
