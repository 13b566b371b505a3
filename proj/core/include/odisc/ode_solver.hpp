#pragma once

#include <functional>
#include <string>

#include <Eigen/Core>

#include "odisc/expr.hpp"
#include "odisc/trajectory.hpp"

namespace odisc {

// Initial value problem for an implicit scalar ODE D(u) - F(t) = 0.
struct IvpSpec {
  OdeExpr residual;        // all placeholders bound
  ForceFn force;           // optional known forcing term
  Eigen::VectorXd grid;    // ascending sample times, grid[0] is t0
  std::vector<double> y0;  // initial state, length = residual order
  double blowup = 1e6;
  double rtol = 1e-8;
  double atol = 1e-10;
  long max_steps = 100000;
};

struct IvpOutcome {
  bool success = false;
  std::string message;
  double t_fail = 0.0;  // meaningful when !success
  Trajectory traj;      // du filled always, ddu for order-2 problems
};

// Vector field closure; returns false when the highest derivative cannot
// be isolated or the result is not finite.
using VectorField =
    std::function<bool(double, const Eigen::VectorXd&, Eigen::VectorXd&)>;

// Standard order reduction y = (u) or (u, du). Isolation of the highest
// derivative is symbolic when the residual is affine in it, otherwise a
// bisection-backed secant seeded from the previous accepted value.
// Throws config errors for order 0, unbound constants, or bad state size.
VectorField to_first_order(const IvpSpec& spec);

// Adaptive Dormand-Prince RK45 with dense output onto spec.grid.
IvpOutcome solve_ivp(const IvpSpec& spec);

}  // namespace odisc
