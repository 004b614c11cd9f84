#pragma once

#include <string>
#include <vector>

#include "craniofit/delaunay.hpp"
#include "craniofit/face_model.hpp"
#include "craniofit/optimize.hpp"
#include "craniofit/renderer.hpp"

namespace craniofit {

// 2D landmarks (pixels) keyed by id. After reduction there are exactly 46.
struct landmark_set {
  std::vector<int>  ids;
  std::vector<vec2> points;
  std::string       source = "detected-file";  // or "synthetic-render"

  std::size_t size() const { return ids.size(); }
  // Unique ids, finite points, matching lengths; `reduced` also demands
  // exactly the ids 1..46.
  void validate(bool reduced = true) const;
  // Position of landmark `id`; throws when absent.
  const vec2& at(int id) const;
};

// Text "id x y" per line; '#' starts a comment line.
landmark_set read_landmarks(const std::string& path);
void         write_landmarks(const landmark_set& set, const std::string& path);

// Merges a 66-point detector set into the 46 reduced landmarks (mean of
// each merge group). Passes a set that already holds the 46 ids through.
landmark_set reduce_landmarks(const landmark_set& detected);

// Projected anthropometric landmarks of a code (ids 1..46).
landmark_set render_landmarks(const face_model& model, const semantic_code& code,
    const camera_intrinsics& intrinsics);

// Root-mean-square distance between two landmark sets with equal ids. With
// `rigid_align` the first set is first moved by the proper 2D rotation and
// translation that best matches the second; the edge-length loss cannot see
// such motions, so this is the round-trip measure for fits.
double landmark_rms(const landmark_set& a, const landmark_set& b, bool rigid_align);

// Same projected mesh with the global head rotation folded into the camera
// rotation and translation (global joint entries become zero).
semantic_code move_head_rotation_to_camera(const face_model& model, const semantic_code& code);

struct fit_config {
  double            w_m = 1.0;
  double            w_r = 1e-3;
  descent_options   descent;
  camera_intrinsics intrinsics;

  void validate() const;
};

// Defaults for a model: canonical 240x240 intrinsics, 500 iterations,
// relative tolerance 1e-6.
fit_config default_fit_config(const face_model& model);

// Zero geometry, canonical camera translation and lighting.
semantic_code default_initial_code(const face_model& model);

struct loss_terms {
  double total = 0;
  double e_m   = 0;
  double e_r   = 0;
};

// E_m over the graph's edges (graph built on P, ids paired by position in
// P) and E_r = |alpha|^2 + |delta|^2 + |theta|^2.
loss_terms geometric_loss(const landmark_set& p, const landmark_set& p_prime,
    const landmark_graph& graph, const semantic_code& code, const fit_config& cfg);

// Loss of a code against target landmarks (P' rendered from the code);
// optional gradient over all 228 entries.
loss_terms fit_objective(const face_model& model, const landmark_set& target,
    const landmark_graph& graph, const semantic_code& code, const fit_config& cfg,
    Eigen::VectorXd* gradient = nullptr);

struct fit_result {
  semantic_code       code;
  loss_terms          loss;
  int                 iterations = 0;
  bool                converged  = false;
  std::string         stop_reason;
  std::vector<double> loss_curve;
};

fit_result fit_single(const face_model& model, const landmark_set& landmarks,
    const fit_config& cfg, const semantic_code& init);

struct multi_fit_result {
  Eigen::VectorXd          geometry;  // shared G
  std::vector<semantic_code> codes;   // G with each image's rendering block
  std::vector<loss_terms>    per_image;
  double                     total_loss = 0;
  int                        iterations = 0;
  bool                       converged  = false;
  std::vector<double>        loss_curve;
  std::vector<fit_result>    stage_one;
};

// Stage 1 fits every set independently; stage 2 starts from the mean G and
// the stage-1 rendering blocks and minimizes sum_j E_loss(G, R_j).
multi_fit_result fit_multi(const face_model& model, const std::vector<landmark_set>& sets,
    const fit_config& cfg, const semantic_code& init);

// Maps landmarks to a semantic code. The shipped implementation fits by
// analysis-by-synthesis; a learned regressor can implement the same call.
class encoder {
 public:
  virtual ~encoder() = default;
  virtual semantic_code encode(const landmark_set& landmarks) const = 0;
};

class fitting_encoder final : public encoder {
 public:
  fitting_encoder(const face_model& model, fit_config cfg);
  semantic_code encode(const landmark_set& landmarks) const override;

 private:
  const face_model& model_;
  fit_config        cfg_;
};

}  // namespace craniofit
