#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "craniofit/face_model.hpp"
#include "craniofit/geometry.hpp"
#include "craniofit/image.hpp"
#include "craniofit/optimize.hpp"
#include "craniofit/renderer.hpp"
#include "craniofit/segmentation.hpp"
#include "craniofit/superimposition.hpp"

namespace craniofit {

enum class removal_policy { any, majority };

// Regions whose associated landmarks failed the match test. "any" removes a
// region with at least one unmatched landmark, "majority" one where more than
// half of its scored landmarks are unmatched.
std::set<int> select_unmatched_regions(const segmentation& seg, const superimposition_result& sup,
    removal_policy policy = removal_policy::any);

struct masked_render {
  rendered_image y;  // normalized render of the face
  mask_image     B;  // 0 where the covering triangle lies wholly in removed regions
};

masked_render build_mask(const face_model& model, const semantic_code& code,
    const std::set<int>& removed_regions, const segmentation& seg);

// W_i = mean of (1 - B_j) over the clipped window around i without i itself,
// for known pixels; 0 for missing ones. Row-major, one value per pixel.
std::vector<double> importance_weights(const mask_image& B, int window);

// sum_p W_p sum_c |g_pc - y_pc|. Writes d/dg into `gradient` when given.
double context_loss(const rgb_image& g, const rgb_image& y, const std::vector<double>& W,
    rgb_image* gradient = nullptr);

// lambda_p * log(1 - D). Contract error unless 0 < D < 1.
double prior_loss(double discriminator_score, double lambda_p);
// d(prior_loss)/dD.
double prior_loss_derivative(double discriminator_score, double lambda_p);

// Extended landmarks by id plus the definite-region offset surface that the
// listed face vertices should lie on.
struct geometry_constraints {
  std::map<int, vec3>                   landmarks;
  std::shared_ptr<const offset_surface> definite_surface;
  std::vector<int>                      definite_vertices;

  std::size_t size() const { return landmarks.size() + (definite_surface ? definite_vertices.size() : 0); }
  void        validate(const face_model& model) const;
};

// Landmark constraints for every id in the table plus the definite vertices
// of `seg` against the skull offset at d_1.
geometry_constraints make_geometry_constraints(const skull_annotation& skull, const tissue_table& depths,
    const segmentation& seg);

// One term of the geometry sum: its size (mm) and its unit gradient with
// respect to the constrained vertex.
struct geometry_residual {
  int    vertex = 0;
  vec3   direction = vec3::Zero();
  double size      = 0;
  bool   isotropic = true;  // point constraint; false for offset-surface terms
};

std::vector<geometry_residual> geometry_residuals(const mesh& face, const face_model& model,
    const geometry_constraints& constraints);

// lambda_2 * (sum over landmarks |p_id - n_id| + sum over definite vertices
// of the distance to the offset surface). Appends per-vertex gradients.
double geometry_loss(const mesh& face, const face_model& model, const geometry_constraints& constraints,
    double lambda_2, std::vector<vertex_gradient>* gradients = nullptr);

// Image generator G: z -> rendered image. `structure` freezes whatever
// discrete state the generator has (for a rasterizer, the pixel coverage),
// which makes the image a smooth function of z.
class image_generator {
 public:
  virtual ~image_generator() = default;

  virtual int            latent_dim() const = 0;
  virtual rendered_image generate(const Eigen::VectorXd& z) const = 0;
  virtual rendered_image generate_fixed(const Eigen::VectorXd& z, const rendered_image& structure) const {
    (void)structure;
    return generate(z);
  }
  // d/dz of sum_p <pixel_gradient_p, generate_fixed(z, structure)_p>.
  virtual Eigen::VectorXd backward(const Eigen::VectorXd& z, const rendered_image& structure,
      const rgb_image& pixel_gradient) const = 0;

  // Geometry code of the generated face and the transposed Jacobian
  // product. The default product uses central differences of code().
  virtual Eigen::VectorXd code(const Eigen::VectorXd& z) const = 0;
  virtual Eigen::VectorXd code_backward(const Eigen::VectorXd& z, const Eigen::VectorXd& d_code) const;
};

// Realness score in (0, 1) with its image gradient.
class image_discriminator {
 public:
  virtual ~image_discriminator() = default;

  virtual double    score(const rgb_image& image) const = 0;
  virtual rgb_image gradient(const rgb_image& image) const = 0;
};

// Affine generator over the geometry code: G(z) = normalized render of A z + b.
class affine_generator final : public image_generator {
 public:
  affine_generator(face_model model, Eigen::MatrixXd A, Eigen::VectorXd b);

  int             latent_dim() const override { return static_cast<int>(A_.cols()); }
  rendered_image  generate(const Eigen::VectorXd& z) const override;
  rendered_image  generate_fixed(const Eigen::VectorXd& z, const rendered_image& structure) const override;
  Eigen::VectorXd backward(const Eigen::VectorXd& z, const rendered_image& structure,
      const rgb_image& pixel_gradient) const override;
  Eigen::VectorXd code(const Eigen::VectorXd& z) const override;
  Eigen::VectorXd code_backward(const Eigen::VectorXd& z, const Eigen::VectorXd& d_code) const override;

  const Eigen::MatrixXd& A() const { return A_; }
  const Eigen::VectorXd& b() const { return b_; }
  const face_model&      model() const { return model_; }

  // Least-squares latent of a geometry code.
  Eigen::VectorXd latent_of(const Eigen::VectorXd& geometry) const;

 private:
  face_model      model_;
  Eigen::MatrixXd A_;
  Eigen::VectorXd b_;
};

// Average-pooled image features.
Eigen::VectorXd pooled_features(const rgb_image& image, int cell);

// D(I) = logistic(-q), q = |P (f(I) - f_mean)|^2 / d_z with f the pooled
// features and P a linear readout of the whitened latent.
class readout_discriminator final : public image_discriminator {
 public:
  readout_discriminator(Eigen::MatrixXd readout, Eigen::VectorXd feature_mean, int cell, int width, int height);

  double    score(const rgb_image& image) const override;
  rgb_image gradient(const rgb_image& image) const override;
  // Readout latent for an image.
  Eigen::VectorXd latent(const rgb_image& image) const;

 private:
  void check_size(const rgb_image& image) const;

  Eigen::MatrixXd P_;
  Eigen::VectorXd mean_;
  int             cell_;
  int             width_;
  int             height_;
};

struct reference_pair {
  std::shared_ptr<affine_generator>      generator;
  std::shared_ptr<readout_discriminator> discriminator;
};

inline constexpr int default_latent_dim = 32;

// Principal affine map of the training geometries (top d_z components,
// scaled so z ~ N(0, I) reproduces the training covariance) and a ridge
// readout from pooled render features to that latent.
reference_pair reference_gan(const face_model& model, const std::vector<semantic_code>& training_codes,
    int latent_dim = default_latent_dim, std::uint64_t seed = 1);

struct inpaint_settings {
  double          lambda_p = 0.1;
  double          lambda_2 = 1.0;
  int             window   = 7;
  std::uint64_t   seed     = 1;
  descent_options optimizer{.max_iters = 400, .tolerance = 1e-10};

  void validate() const;
};

struct inpaint_problem {
  rgb_image            y;
  mask_image           B;
  geometry_constraints constraints;
  inpaint_settings     settings;

  void validate(const face_model& model) const;
};

struct inpaint_terms {
  double context  = 0;
  double prior    = 0;
  double geometry = 0;

  double total() const { return context + prior + geometry; }
};

// Composed loss over z for one problem.
class inpaint_objective {
 public:
  inpaint_objective(const inpaint_problem& problem, const image_generator& G, const image_discriminator& D,
      const face_model& model);

  inpaint_terms evaluate(const Eigen::VectorXd& z, Eigen::VectorXd* gradient = nullptr) const;
  // Same loss with the generator structure frozen.
  inpaint_terms evaluate_fixed(const Eigen::VectorXd& z, const rendered_image& structure,
      Eigen::VectorXd* gradient = nullptr) const;

  const std::vector<double>& weights() const { return W_; }

 private:
  const inpaint_problem&     problem_;
  const image_generator&     G_;
  const image_discriminator& D_;
  const face_model&          model_;
  std::vector<double>        W_;
};

struct inpaint_result {
  Eigen::VectorXd         z;
  rendered_image          image;
  semantic_code           code;  // canonical code carrying the generated geometry
  mesh                    face;
  inpaint_terms              final_terms;
  std::vector<inpaint_terms> trace;  // z0 and every accepted step
  int                     iterations = 0;
  std::string             stop_reason;
};

// Curvature of the reweighted least-squares bound on the geometry sum:
// sum_i J_i^T J_i / max(|r_i|, floor), where definite-region terms only
// curve along their residual direction. floor <= 0 gives the unweighted
// sum of J_i^T J_i over all constrained vertices. J_i = d vertex_i / d z.
Eigen::MatrixXd geometry_metric(const geometry_constraints& constraints, const image_generator& G,
    const face_model& model, const Eigen::VectorXd& z, double floor);

// Uniform z0 in [-1, 1]^d_z from the settings seed.
Eigen::VectorXd initial_latent(int latent_dim, std::uint64_t seed);

inpaint_result solve(const inpaint_problem& problem, const image_generator& G, const image_discriminator& D,
    const face_model& model);
inpaint_result solve(const inpaint_problem& problem, const image_generator& G, const image_discriminator& D,
    const face_model& model, const Eigen::VectorXd& z0);

// Largest relative error between the analytic total-loss gradient and
// central differences at z, with the generator structure frozen at G(z).
double inpaint_gradient_error(const inpaint_objective& objective, const image_generator& G,
    const Eigen::VectorXd& z, double step = 1e-6);

// Mean-shape vertices facing the camera (z < 0 in the model frame).
std::vector<int> frontal_vertices(const face_model& model);

// "iter,total,Lc,Lp,Lg" rows.
void write_loss_trace(const std::vector<inpaint_terms>& trace, const std::string& path);

// Problem bundle: y.ppm, B.pgm, constraints.txt ("id x y z"), settings.txt
// (key=value), plus definite.txt and skull.obj when a definite surface is set.
void            write_problem_bundle(const inpaint_problem& problem, const std::string& directory);
inpaint_problem read_problem_bundle(const std::string& directory);

}  // namespace craniofit
