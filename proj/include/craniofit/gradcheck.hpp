#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "craniofit/face_model.hpp"

namespace craniofit {

struct gradient_check_options {
  int           count     = 10;  // random configurations per term
  std::uint64_t seed      = 1;
  double        tolerance = 1e-4;
  double        step      = 1e-5;
  // Test hook: name of a term whose analytic gradient is deliberately
  // offset before comparison, so the harness must report it as failing.
  std::string corrupt_term;
  // Subset of terms to run; empty runs all of them.
  std::vector<std::string> terms;

  void validate() const;
};

struct gradient_check_row {
  std::string term;
  int         configuration = 0;
  double      max_relative_error = 0;
  bool        passed = false;
};

// Terms: "renderer.backward" (projected positions and colours of the
// landmark vertices), "renderer.image" (rendered image at fixed coverage),
// "fitting.objective" (landmark-graph fit loss), "inpainting.total"
// (composed inpainting loss over z). The relative error of an entry is
// |fd - analytic| / max(1, |analytic|).
std::vector<gradient_check_row> run_gradient_checks(const face_model& model, const gradient_check_options& options);

// Max relative error of renderer.backward on one random code.
double renderer_gradient_error(const face_model& model, std::uint64_t seed, double step = 1e-5);

}  // namespace craniofit
