#pragma once

#include <functional>
#include <limits>

#include <Eigen/Dense>

namespace odisc {

struct NelderMeadConfig {
  int max_evals = 0;  // 0 picks 200 * max(1, dimension)
  double x_tol = 1e-8;
  double f_tol = 1e-8;
};

struct NelderMeadResult {
  Eigen::VectorXd best_x;
  double best_f = std::numeric_limits<double>::infinity();
  int evaluations = 0;
};

// Minimizes f from x0 with the Nelder-Mead simplex method using
// reflection 1, expansion 2, contraction 0.5 and shrink 0.5. The
// initial simplex perturbs each coordinate by 5% (0.00025 when the
// coordinate is zero). Terminates when the simplex collapses below
// the tolerances or the evaluation budget is spent. A zero-dimensional
// x0 returns f(x0) immediately.
NelderMeadResult nelder_mead(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& x0, const NelderMeadConfig& cfg = {});

}  // namespace odisc
