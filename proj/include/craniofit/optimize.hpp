#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace craniofit {

struct descent_options {
  int    max_iters       = 500;
  double tolerance       = 1e-6;   // relative change of the objective
  double gradient_floor  = 1e-12;  // stop when |g| <= gradient_floor * max(1, |f|)
  double armijo          = 1e-4;
  double shrink          = 0.5;
  int    max_backtracks  = 60;
  double initial_step    = 1.0;    // length of the first trial step
  double max_step_growth = 1e4;    // cap on BB step relative to the first step

  void validate() const;
};

struct descent_result {
  Eigen::VectorXd     x;
  double              value = 0;
  int                 iterations = 0;  // accepted steps
  bool                converged  = false;
  std::string         stop_reason;
  std::vector<double> trace;  // objective at x0 and after every accepted step
};

// Value at x; writes the gradient into `grad` (same size as x).
using objective_fn = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

// Called after each accepted step with (iteration, x, value).
using iteration_fn = std::function<void(int, const Eigen::VectorXd&, double)>;

// Gradient descent with Barzilai-Borwein trial steps and Armijo
// backtracking. Accepted values never increase. Throws a numerical error
// on a non-finite objective or gradient at an accepted point.
descent_result minimize(const objective_fn& f, const Eigen::VectorXd& x0,
    const descent_options& options, const iteration_fn& on_iteration = {});

}  // namespace craniofit
