#include "craniofit/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>

#include "craniofit/error.hpp"
#include "craniofit/fitting.hpp"
#include "craniofit/inpainting.hpp"
#include "craniofit/population.hpp"
#include "craniofit/renderer.hpp"

namespace craniofit {

void gradient_check_options::validate() const {
  if (count < 1) throw_invalid("gradient check count must be at least 1");
  if (!(tolerance > 0)) throw_invalid("gradient check tolerance must be positive");
  if (!(step > 0)) throw_invalid("finite-difference step must be positive");
}

namespace {

semantic_code random_code(std::mt19937_64& rng, const face_model& model, double scale) {
  std::normal_distribution<double> g;
  const auto    setup = canonical_setup_for(model);
  semantic_code x;
  for (int i = 0; i < shape_dim + expression_dim; ++i) x.values[i] = scale * g(rng);
  for (int i = 0; i < pose_dim; ++i) x.theta()[i] = 0.1 * scale * g(rng);
  for (int i = 0; i < 3; ++i) x.camera_rotation()[i] = 0.1 * scale * g(rng);
  x.camera_translation() = setup.translation + scale * vec3(10 * g(rng), 10 * g(rng), 30 * g(rng));
  x.gamma()              = setup.gamma;
  for (int i = 0; i < gamma_dim; ++i) x.gamma()[i] += 0.1 * scale * g(rng);
  return x;
}

template <class Loss>
double compare(const Loss& loss, const semantic_code& x, Eigen::VectorXd analytic, double h, int stride, bool corrupt) {
  if (corrupt) analytic[0] += 1e-2 * (1 + std::abs(analytic[0]));
  double worst = 0;
  for (int p = 0; p < code_dim; p += stride) {
    semantic_code a = x, b = x;
    a.values[p] += h;
    b.values[p] -= h;
    const double fd = (loss(a) - loss(b)) / (2 * h);
    worst           = std::max(worst, std::abs(fd - analytic[p]) / std::max(1.0, std::abs(analytic[p])));
  }
  return worst;
}

std::vector<int> landmark_vertex_list(const face_model& model) {
  std::vector<int> v;
  for (const auto& [id, idx] : model.anthropometric_map) v.push_back(idx);
  return v;
}

double renderer_error(const face_model& model, std::mt19937_64& rng, double h, bool corrupt) {
  std::normal_distribution<double> g;
  const auto k    = canonical_setup_for(model).intrinsics;
  const auto lms  = landmark_vertex_list(model);
  const auto x    = random_code(rng, model, 1.0);
  std::vector<vec2> target(lms.size());
  std::vector<vec3> wc(lms.size());
  for (std::size_t i = 0; i < lms.size(); ++i) {
    target[i] = vec2(120 + 40 * g(rng), 120 + 40 * g(rng));
    wc[i]     = vec3(g(rng), g(rng), g(rng));
  }
  const auto loss = [&](const semantic_code& c) {
    const auto out = forward_vertices(model, c, k, lms);
    double     s   = 0;
    for (std::size_t i = 0; i < lms.size(); ++i) s += 0.5 * (out[i].pixel - target[i]).squaredNorm() + 10 * wc[i].dot(out[i].color);
    return s;
  };
  const auto out = forward_vertices(model, x, k, lms);
  std::vector<output_gradient> grads;
  for (std::size_t i = 0; i < lms.size(); ++i) grads.push_back({lms[i], out[i].pixel - target[i], 10 * wc[i]});
  return compare(loss, x, backward(model, x, k, grads), h, 1, corrupt);
}

double image_error(const face_model& model, std::mt19937_64& rng, double h, bool corrupt) {
  std::normal_distribution<double> g;
  const auto k    = canonical_setup_for(model).intrinsics;
  const auto x    = random_code(rng, model, 0.5);
  const auto base = render(model, x, k);
  rgb_image  w(k.width, k.height);
  for (auto& p : w.pixels) p = g(rng);
  const auto loss = [&](const semantic_code& c) {
    const auto img = render_fixed_coverage(model, c, k, base);
    double     s   = 0;
    for (std::size_t i = 0; i < img.color.pixels.size(); ++i) s += w.pixels[i] * img.color.pixels[i];
    return s;
  };
  return compare(loss, x, backward_image(model, x, k, base, w), h, 3, corrupt);
}

double fitting_error(const face_model& model, std::mt19937_64& rng, double h, bool corrupt) {
  const auto cfg    = default_fit_config(model);
  const auto target = render_landmarks(model, random_code(rng, model, 0.5), cfg.intrinsics);
  const auto graph  = delaunay(target.points);
  const auto x      = random_code(rng, model, 0.5);
  Eigen::VectorXd grad;
  fit_objective(model, target, graph, x, cfg, &grad);
  const auto loss = [&](const semantic_code& c) { return fit_objective(model, target, graph, c, cfg).total; };
  return compare(loss, x, grad, h, 1, corrupt);
}

struct inpaint_fixture {
  reference_pair  gan;
  inpaint_problem problem;
};

inpaint_fixture make_inpaint_fixture(const face_model& model, std::uint64_t seed) {
  constexpr int   latent = 8;
  const auto      pop    = face_population::make(seed, latent);
  std::mt19937_64 rng(seed + 1);
  std::vector<semantic_code> training;
  for (int i = 0; i < 24; ++i) training.push_back(pop.sample(model, rng));
  inpaint_fixture f;
  f.gan = reference_gan(model, training, latent, seed);

  const auto seg    = template_segmentation(model);
  const auto depths = placeholder_tissue_table();
  const auto truth  = evaluate(model, pop.sample_geometry(rng));
  const auto skull  = synthesize_skull(truth, model, depths, seg.definite_vertices(), 5);
  const auto cand   = pop.sample(model, rng);
  const auto sup    = superimpose(evaluate(model, cand.geometry()), model, skull, depths, alignment::identity());
  const auto mask   = build_mask(model, cand, select_unmatched_regions(seg, sup), seg);
  f.problem.y           = mask.y.color;
  f.problem.B           = mask.B;
  f.problem.constraints = make_geometry_constraints(skull, depths, seg);
  f.problem.settings.lambda_p = 0.5;
  return f;
}

double inpainting_error(const face_model& model, const inpaint_fixture& f, std::mt19937_64& rng, double h, bool corrupt) {
  const inpaint_objective objective(f.problem, *f.gan.generator, *f.gan.discriminator, model);
  const auto              z = initial_latent(f.gan.generator->latent_dim(), rng());
  if (!corrupt) return inpaint_gradient_error(objective, *f.gan.generator, z, h);

  const auto      structure = f.gan.generator->generate(z);
  Eigen::VectorXd analytic;
  objective.evaluate_fixed(z, structure, &analytic);
  analytic[0] += 1e-2 * (1 + std::abs(analytic[0]));
  double          worst = 0;
  Eigen::VectorXd zp    = z;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    zp[i]              = z[i] + h;
    const double plus  = objective.evaluate_fixed(zp, structure).total();
    zp[i]              = z[i] - h;
    const double minus = objective.evaluate_fixed(zp, structure).total();
    zp[i]              = z[i];
    const double fd    = (plus - minus) / (2 * h);
    worst              = std::max(worst, std::abs(fd - analytic[i]) / std::max(1.0, std::abs(analytic[i])));
  }
  return worst;
}

}  // namespace

double renderer_gradient_error(const face_model& model, std::uint64_t seed, double step) {
  std::mt19937_64 rng(seed);
  return renderer_error(model, rng, step, false);
}

std::vector<gradient_check_row> run_gradient_checks(const face_model& model, const gradient_check_options& options) {
  options.validate();
  model.validate();
  const std::vector<std::string> all = {"renderer.backward", "renderer.image", "fitting.objective", "inpainting.total"};
  const auto known = [&](const std::string& t) { return std::find(all.begin(), all.end(), t) != all.end(); };
  if (!options.corrupt_term.empty() && !known(options.corrupt_term)) {
    throw_invalid("unknown gradient term '" + options.corrupt_term + "'");
  }
  for (const auto& t : options.terms)
    if (!known(t)) throw_invalid("unknown gradient term '" + t + "'");
  std::vector<std::string> terms;
  for (const auto& t : all)
    if (options.terms.empty() || std::find(options.terms.begin(), options.terms.end(), t) != options.terms.end())
      terms.push_back(t);

  std::mt19937_64                 rng(options.seed);
  std::optional<inpaint_fixture>  fixture;
  if (std::find(terms.begin(), terms.end(), "inpainting.total") != terms.end()) fixture = make_inpaint_fixture(model, options.seed);

  std::vector<gradient_check_row> rows;
  for (const auto& term : terms) {
    const bool corrupt = term == options.corrupt_term;
    for (int c = 0; c < options.count; ++c) {
      double err = 0;
      if (term == "renderer.backward") err = renderer_error(model, rng, options.step, corrupt);
      else if (term == "renderer.image") err = image_error(model, rng, options.step, corrupt);
      else if (term == "fitting.objective") err = fitting_error(model, rng, options.step, corrupt);
      else err = inpainting_error(model, *fixture, rng, 1e-6, corrupt);
      rows.push_back({term, c, err, err < options.tolerance});
    }
  }
  return rows;
}

}  // namespace craniofit
