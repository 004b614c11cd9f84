#include "craniofit/optimize.hpp"

#include <cmath>

#include "craniofit/error.hpp"

namespace craniofit {

void descent_options::validate() const {
  if (max_iters < 0) throw_invalid("max_iters must be non-negative");
  if (!(tolerance >= 0)) throw_invalid("tolerance must be non-negative");
  if (!(armijo > 0 && armijo < 1)) throw_invalid("armijo constant must lie in (0, 1)");
  if (!(shrink > 0 && shrink < 1)) throw_invalid("backtracking factor must lie in (0, 1)");
  if (max_backtracks < 1) throw_invalid("max_backtracks must be positive");
  if (!(initial_step > 0)) throw_invalid("initial_step must be positive");
}

descent_result minimize(const objective_fn& f, const Eigen::VectorXd& x0,
    const descent_options& options, const iteration_fn& on_iteration) {
  options.validate();
  descent_result out;
  out.x = x0;
  Eigen::VectorXd g(x0.size());
  out.value = f(out.x, g);
  if (!std::isfinite(out.value) || !g.allFinite()) {
    throw_numerical("non-finite objective at iteration 0");
  }
  out.trace.push_back(out.value);

  const double    g0_norm    = g.norm();
  double          step       = g0_norm > 0 ? options.initial_step / g0_norm : 0.0;
  const double    step_limit = step * options.max_step_growth;
  Eigen::VectorXd trial_grad(x0.size());

  for (int it = 1; it <= options.max_iters; ++it) {
    const double gnorm2 = g.squaredNorm();
    if (std::sqrt(gnorm2) <= options.gradient_floor * std::max(1.0, std::abs(out.value))) {
      out.converged   = true;
      out.stop_reason = "gradient vanished";
      return out;
    }

    // Armijo backtracking along -g starting from the BB step.
    double          t = step;
    Eigen::VectorXd trial;
    double          trial_value = 0;
    bool            accepted    = false;
    for (int bt = 0; bt < options.max_backtracks; ++bt) {
      trial       = out.x - t * g;
      trial_value = f(trial, trial_grad);
      if (std::isfinite(trial_value) && trial_value <= out.value - options.armijo * t * gnorm2) {
        accepted = true;
        break;
      }
      t *= options.shrink;
    }
    if (!accepted) {
      out.converged   = true;
      out.stop_reason = "line search stalled";
      return out;
    }
    if (!trial_grad.allFinite()) throw_numerical("non-finite gradient at iteration " + std::to_string(it));

    const Eigen::VectorXd s  = trial - out.x;
    const Eigen::VectorXd y  = trial_grad - g;
    const double          sy = s.dot(y);
    step = sy > 0 ? s.squaredNorm() / sy : 2 * t;
    if (step_limit > 0) step = std::min(step, step_limit);

    const double previous = out.value;
    out.x     = std::move(trial);
    out.value = trial_value;
    g         = trial_grad;
    out.iterations = it;
    out.trace.push_back(out.value);
    if (on_iteration) on_iteration(it, out.x, out.value);

    if (std::abs(previous - out.value) <= options.tolerance * std::max(std::abs(previous), 1e-300)) {
      out.converged   = true;
      out.stop_reason = "relative change below tolerance";
      return out;
    }
  }
  out.stop_reason = "iteration limit";
  return out;
}

}  // namespace craniofit
