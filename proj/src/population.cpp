#include "craniofit/population.hpp"

#include <cmath>

#include "craniofit/error.hpp"
#include "craniofit/inpainting.hpp"
#include "craniofit/renderer.hpp"

namespace craniofit {

face_population face_population::make(std::uint64_t seed, int rank) {
  if (rank < 1 || rank > geometry_dim) throw_invalid("population rank must be in [1, 195]");
  constexpr double joint_scale = 0.05;  // rad
  std::mt19937_64                  rng(seed);
  std::normal_distribution<double> normal;
  const double                     k = 1.0 / std::sqrt(static_cast<double>(rank));
  face_population                  p;
  p.basis = Eigen::MatrixXd::Zero(geometry_dim, rank);
  for (int i = 0; i < shape_dim + expression_dim; ++i)
    for (int j = 0; j < rank; ++j) p.basis(i, j) = k * normal(rng);
  for (int i = 3; i < pose_dim; ++i)
    for (int j = 0; j < rank; ++j) p.basis(semantic_code::theta_offset + i, j) = joint_scale * k * normal(rng);
  return p;
}

Eigen::VectorXd face_population::sample_geometry(std::mt19937_64& rng) const {
  std::normal_distribution<double> normal;
  Eigen::VectorXd                  w(rank());
  for (int j = 0; j < rank(); ++j) w[j] = normal(rng);
  return basis * w;
}

semantic_code face_population::sample(const face_model& model, std::mt19937_64& rng) const {
  return canonical_code(model, sample_geometry(rng));
}

ground_truth_pair sample_ground_truth(const face_population& population, const face_model& model,
    const segmentation& seg, const tissue_table& depths, std::mt19937_64& rng, int max_attempts) {
  if (max_attempts < 1) throw_invalid("ground-truth sampling needs at least one attempt");
  ground_truth_pair g;
  for (g.attempts = 1; g.attempts <= max_attempts; ++g.attempts) {
    g.code  = population.sample(model, rng);
    g.face  = evaluate(model, g.code.geometry());
    g.skull = synthesize_skull(g.face, model, depths, seg.definite_vertices());
    const auto c = make_geometry_constraints(g.skull, depths, seg);
    if (geometry_loss(g.face, model, c, 1.0, nullptr) < 1e-9) return g;
  }
  throw_numerical("no consistent face and skull pair in " + std::to_string(max_attempts) + " draws");
}

}  // namespace craniofit
