#include "odisc/ode_solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace odisc {

namespace {

// --------------------------------------------------------------------------
// Highest-derivative isolation.

// Residual restricted to the highest derivative at a fixed (t, u, du).
struct TopResidual {
  const CompiledResidual* cr;
  const ForceFn* force;
  double t, u, du;
  int order;

  double operator()(double x) const {
    double r = order >= 2 ? cr->eval_point(t, u, du, x, nullptr)
                          : cr->eval_point(t, u, x, 0.0, nullptr);
    if (force && *force) r -= (*force)(t);
    return r;
  }
};

bool secant_bisect(const TopResidual& g, double lo, double hi, double flo,
                   double fhi, double tol, double* out) {
  double a = lo, b = hi, fa = flo, fb = fhi;
  double x = a, fx = fa;
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (a + b);
    double cand = fb != fa ? b - fb * (b - a) / (fb - fa) : mid;
    if (!(cand > std::min(a, b) && cand < std::max(a, b))) cand = mid;
    x = cand;
    fx = g(x);
    if (!std::isfinite(fx)) return false;
    if (std::abs(fx) <= tol || std::abs(b - a) <= 1e-14 * (1.0 + std::abs(x))) {
      *out = x;
      return true;
    }
    if ((fa < 0.0) != (fx < 0.0)) {
      b = x;
      fb = fx;
    } else {
      a = x;
      fa = fx;
    }
  }
  *out = x;
  return std::abs(fx) <= tol * 100.0;
}

// Coarse scan plus golden-section refinement of |g|; rescues roots that
// produce no sign change (tangent roots such as x^2 = 0).
bool min_abs_search(const TopResidual& g, double seed, double tol,
                    double* out) {
  const double golden = 0.5 * (3.0 - std::sqrt(5.0));
  for (double half : {1.0, 10.0, 100.0, 1e4}) {
    double lo = seed - half, hi = seed + half;
    const int n = 128;
    double best_x = seed, best = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= n; ++i) {
      double x = lo + (hi - lo) * i / n;
      double v = std::abs(g(x));
      if (v < best) {
        best = v;
        best_x = x;
      }
    }
    double step = (hi - lo) / n;
    double a = best_x - step, b = best_x + step;
    for (int it = 0; it < 120 && b - a > 1e-14 * (1.0 + std::abs(best_x));
         ++it) {
      double c = a + golden * (b - a);
      double d = b - golden * (b - a);
      if (std::abs(g(c)) < std::abs(g(d)))
        b = d;
      else
        a = c;
    }
    double x = 0.5 * (a + b);
    double v = std::abs(g(x));
    if (std::isfinite(v) && v <= tol) {
      *out = x;
      return true;
    }
  }
  return false;
}

// Solves g(x) = 0 near the seed. Affine residuals are isolated exactly;
// otherwise brackets are grown around the seed (upper side first) and a
// safeguarded secant runs inside the first sign change found.
bool isolate_top(const TopResidual& g, bool affine, double seed, double* out) {
  if (affine) {
    double b = g(0.0);
    double a = g(1.0) - b;
    if (!std::isfinite(a) || !std::isfinite(b)) return false;
    if (std::abs(a) < 1e-14 * std::max(1.0, std::abs(b))) return false;
    *out = -b / a;
    return std::isfinite(*out);
  }

  double tol = 1e-10 * (1.0 + std::abs(seed));
  double f0 = g(seed);
  if (!std::isfinite(f0)) return false;
  if (std::abs(f0) <= tol) {
    *out = seed;
    return true;
  }

  double h = std::max(1e-6, 1e-3 * (1.0 + std::abs(seed)));
  double up = seed, fup = f0, dn = seed, fdn = f0;
  for (int k = 0; k < 48; ++k) {
    double nup = seed + h, ndn = seed - h;
    double fnup = g(nup), fndn = g(ndn);
    if (std::isfinite(fnup) && (fup < 0.0) != (fnup < 0.0))
      return secant_bisect(g, up, nup, fup, fnup, tol, out);
    if (std::isfinite(fndn) && (fdn < 0.0) != (fndn < 0.0))
      return secant_bisect(g, ndn, dn, fndn, fdn, tol, out);
    if (std::isfinite(fnup)) {
      up = nup;
      fup = fnup;
    }
    if (std::isfinite(fndn)) {
      dn = ndn;
      fdn = fndn;
    }
    h *= 2.0;
    if (h > 1e12) break;
  }
  return min_abs_search(g, seed, 1e-8 * (1.0 + std::abs(seed)), out);
}

bool has_unbound(const ExprNode& n) {
  if (n.kind == ExprNode::Kind::cplace && !n.bound) return true;
  for (const ExprNode& c : n.children)
    if (has_unbound(c)) return true;
  return false;
}

struct FieldState {
  CompiledResidual cr;
  ForceFn force;
  int order;
  bool affine;
  double seed = 0.0;
  bool seeded = false;

  explicit FieldState(const IvpSpec& spec)
      : cr(spec.residual),
        force(spec.force),
        order(spec.residual.order),
        affine(cr.affine_in_top()) {}

  bool top(double t, double u, double du, double* out) {
    TopResidual g{&cr, &force, t, u, du, order};
    if (!seeded) {
      // First call: no history, start the search at zero.
      seed = 0.0;
      seeded = true;
    }
    if (!isolate_top(g, affine, seed, out)) return false;
    seed = *out;
    return true;
  }
};

// --------------------------------------------------------------------------
// Dormand-Prince tableau and dense-output coefficients.

constexpr double kC[7] = {0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1, 1};
constexpr double kA[7][6] = {
    {},
    {1.0 / 5},
    {3.0 / 40, 9.0 / 40},
    {44.0 / 45, -56.0 / 15, 32.0 / 9},
    {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
    {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
    {35.0 / 384, 0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84},
};
constexpr double kE[7] = {35.0 / 384 - 5179.0 / 57600,
                          0,
                          500.0 / 1113 - 7571.0 / 16695,
                          125.0 / 192 - 393.0 / 640,
                          -2187.0 / 6784 + 92097.0 / 339200,
                          11.0 / 84 - 187.0 / 2100,
                          -1.0 / 40};
constexpr double kP[7][4] = {
    {1, -8048581381.0 / 2820520608, 8663915743.0 / 2820520608,
     -12715105075.0 / 11282082432},
    {0, 0, 0, 0},
    {0, 131558114200.0 / 32700410799, -68118460800.0 / 10900136933,
     87487479700.0 / 32700410799},
    {0, -1754552775.0 / 470086768, 14199869525.0 / 1410260304,
     -10690763975.0 / 1880347072},
    {0, 127303824393.0 / 49829197408, -318862633887.0 / 49829197408,
     701980252875.0 / 199316789632},
    {0, -282668133.0 / 205662961, 2019193451.0 / 616988883,
     -1453857185.0 / 822651844},
    {0, 40617522.0 / 29380423, -110615467.0 / 29380423,
     69997945.0 / 29380423}};

struct Rk45Result {
  bool success = false;
  std::string message;
  double t_fail = 0.0;
  Eigen::MatrixXd y;  // one row per grid point
};

Rk45Result rk45(const VectorField& f, const Eigen::VectorXd& grid,
                const Eigen::VectorXd& y0, double rtol, double atol,
                double blowup, long max_steps) {
  const auto dim = y0.size();
  const auto n_out = grid.size();
  Rk45Result res;
  res.y.resize(n_out, dim);

  double t = grid[0];
  double t_end = grid[n_out - 1];
  Eigen::VectorXd y = y0;
  res.y.row(0) = y.transpose();
  Eigen::Index next_out = 1;

  auto fail = [&](const std::string& msg) {
    res.success = false;
    res.message = msg;
    res.t_fail = t;
    return res;
  };
  if (!y.allFinite()) return fail("non-finite initial state");
  if (n_out == 1) {
    res.success = true;
    return res;
  }

  Eigen::MatrixXd k(7, dim);
  Eigen::VectorXd dy(dim), y_stage(dim), y_new(dim), err(dim);

  if (!f(t, y, dy)) return fail("cannot isolate highest derivative");
  k.row(0) = dy.transpose();

  // scipy-style initial step heuristic
  double h;
  {
    Eigen::VectorXd scale =
        (atol + rtol * y.cwiseAbs().array()).matrix();
    double d0 = std::sqrt((y.array() / scale.array()).square().mean());
    double d1 = std::sqrt((dy.array() / scale.array()).square().mean());
    double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    Eigen::VectorXd y1 = y + h0 * dy;
    Eigen::VectorXd dy1(dim);
    double h1;
    if (f(t + h0, y1, dy1) && dy1.allFinite()) {
      double d2 =
          std::sqrt(((dy1 - dy).array() / scale.array()).square().mean()) / h0;
      h1 = std::max(d1, d2) <= 1e-15
               ? std::max(1e-6, h0 * 1e-3)
               : std::pow(0.01 / std::max(d1, d2), 0.2);
    } else {
      h1 = 1e-6;
    }
    h = std::min({100.0 * h0, h1, t_end - t});
  }

  long steps = 0;
  while (t < t_end) {
    if (++steps > max_steps) return fail("step limit exceeded");
    h = std::min(h, t_end - t);
    if (h < 1e-14 * std::max(1.0, std::abs(t)))
      return fail("step size underflow");

    bool stage_ok = true;
    for (int s = 1; s < 7 && stage_ok; ++s) {
      y_stage = y;
      for (int j = 0; j < s; ++j)
        if (kA[s][j] != 0.0) y_stage += (h * kA[s][j]) * k.row(j).transpose();
      stage_ok = f(t + kC[s] * h, y_stage, dy) && dy.allFinite();
      if (stage_ok) k.row(s) = dy.transpose();
    }
    if (!stage_ok) {
      h *= 0.5;
      continue;
    }
    // stage 6 state is the 5th-order solution (FSAL)
    y_new = y_stage;

    err.setZero();
    for (int s = 0; s < 7; ++s)
      if (kE[s] != 0.0) err += (h * kE[s]) * k.row(s).transpose();
    Eigen::VectorXd scale =
        (atol +
         rtol * y.cwiseAbs().cwiseMax(y_new.cwiseAbs()).array())
            .matrix();
    double err_norm = std::sqrt((err.array() / scale.array()).square().mean());

    if (err_norm <= 1.0) {
      double t_new = t + h;
      // dense output for grid points inside (t, t_new]
      double edge = t_new + 1e-12 * std::max(1.0, std::abs(t_new));
      while (next_out < n_out && grid[next_out] <= edge) {
        double theta = (grid[next_out] - t) / h;
        theta = std::clamp(theta, 0.0, 1.0);
        double q1 = theta, q2 = q1 * theta, q3 = q2 * theta, q4 = q3 * theta;
        Eigen::VectorXd out = y;
        for (int s = 0; s < 7; ++s) {
          double w = kP[s][0] * q1 + kP[s][1] * q2 + kP[s][2] * q3 + kP[s][3] * q4;
          if (w != 0.0) out += (h * w) * k.row(s).transpose();
        }
        res.y.row(next_out++) = out.transpose();
      }
      t = t_new;
      y = y_new;
      k.row(0) = k.row(6);
      if (y.cwiseAbs().maxCoeff() > blowup) return fail("blow-up");
      if (next_out >= n_out) break;
      double factor = err_norm == 0.0
                          ? 10.0
                          : std::clamp(0.9 * std::pow(err_norm, -0.2), 0.2, 10.0);
      h *= factor;
    } else {
      h *= std::clamp(0.9 * std::pow(err_norm, -0.2), 0.2, 1.0);
    }
  }
  while (next_out < n_out) res.y.row(next_out++) = y.transpose();
  res.success = true;
  return res;
}

}  // namespace

VectorField to_first_order(const IvpSpec& spec) {
  int order = spec.residual.order;
  if (order < 1 || order > 2)
    throw Error(Error::Code::config,
                "integrable residual must have order 1 or 2");
  if (has_unbound(spec.residual.root))
    throw Error(Error::Code::config, "residual has unbound constants");
  if (static_cast<int>(spec.y0.size()) != order)
    throw Error(Error::Code::config, "initial state length must equal order");
  if (spec.rtol <= 0.0 || spec.atol <= 0.0)
    throw Error(Error::Code::config, "tolerances must be positive");

  auto state = std::make_shared<FieldState>(spec);
  if (order == 1) {
    return [state](double t, const Eigen::VectorXd& y, Eigen::VectorXd& dy) {
      double top;
      if (!state->top(t, y[0], 0.0, &top)) return false;
      dy[0] = top;
      return true;
    };
  }
  return [state](double t, const Eigen::VectorXd& y, Eigen::VectorXd& dy) {
    double top;
    if (!state->top(t, y[0], y[1], &top)) return false;
    dy[0] = y[1];
    dy[1] = top;
    return true;
  };
}

IvpOutcome solve_ivp(const IvpSpec& spec) {
  IvpOutcome out;
  VectorField f = to_first_order(spec);
  if (spec.grid.size() < 1)
    throw Error(Error::Code::config, "empty time grid");
  for (Eigen::Index i = 0; i + 1 < spec.grid.size(); ++i)
    if (!(spec.grid[i + 1] > spec.grid[i]))
      throw Error(Error::Code::config, "time grid must be ascending");

  int order = spec.residual.order;
  Eigen::VectorXd y0 =
      Eigen::Map<const Eigen::VectorXd>(spec.y0.data(), spec.y0.size());
  Rk45Result r = rk45(f, spec.grid, y0, spec.rtol, spec.atol, spec.blowup,
                      spec.max_steps);
  if (!r.success) {
    out.success = false;
    out.message = r.message;
    out.t_fail = r.t_fail;
    return out;
  }

  auto n = spec.grid.size();
  out.traj.t = spec.grid;
  out.traj.u = r.y.col(0);
  out.traj.provenance = Trajectory::Provenance::ground_truth;
  if (n >= 2) out.traj.fs = 1.0 / (spec.grid[1] - spec.grid[0]);

  // Fill derivative channels from the isolated highest derivative, seeded
  // along the grid for branch continuity.
  FieldState fill(spec);
  if (order == 1) {
    out.traj.du.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      double top;
      if (!fill.top(spec.grid[i], out.traj.u[i], 0.0, &top)) {
        out.success = false;
        out.message = "cannot isolate highest derivative";
        out.t_fail = spec.grid[i];
        return out;
      }
      out.traj.du[i] = top;
    }
  } else {
    out.traj.du = r.y.col(1);
    out.traj.ddu.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      double top;
      if (!fill.top(spec.grid[i], out.traj.u[i], out.traj.du[i], &top)) {
        out.success = false;
        out.message = "cannot isolate highest derivative";
        out.t_fail = spec.grid[i];
        return out;
      }
      out.traj.ddu[i] = top;
    }
  }
  out.success = true;
  return out;
}

}  // namespace odisc
