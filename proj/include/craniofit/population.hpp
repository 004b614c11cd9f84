#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Core>

#include "craniofit/face_model.hpp"
#include "craniofit/segmentation.hpp"
#include "craniofit/superimposition.hpp"

namespace craniofit {

// Low-rank synthetic identity distribution: geometry = basis * w with
// w ~ N(0, I). Shape and expression columns carry unit total variance per
// coefficient, non-global joints a small rotation, the global joint none.
struct face_population {
  Eigen::MatrixXd basis;  // geometry_dim x rank

  static face_population make(std::uint64_t seed, int rank);

  int             rank() const { return static_cast<int>(basis.cols()); }
  Eigen::VectorXd sample_geometry(std::mt19937_64& rng) const;
  // Canonical code (normalization camera and lighting) for a sampled face.
  semantic_code sample(const face_model& model, std::mt19937_64& rng) const;
};

struct ground_truth_pair {
  semantic_code    code;
  mesh             face;
  skull_annotation skull;
  int              attempts = 0;
};

// Draws faces until the synthetic skull under one reproduces it: every
// definite vertex at distance d_1 (geometry residual below 1e-9). A face
// whose definite region runs close to a shallow-tissue landmark cannot
// meet that, so such draws are skipped. Numerical error after
// `max_attempts` draws.
ground_truth_pair sample_ground_truth(const face_population& population, const face_model& model,
    const segmentation& seg, const tissue_table& depths, std::mt19937_64& rng, int max_attempts = 64);

}  // namespace craniofit
