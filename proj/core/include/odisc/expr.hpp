#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "odisc/trajectory.hpp"

namespace odisc {

// Symbolic ODE residual over {+, -, *, /, ^, sin, cos, exp, log} with
// leaves t, u, diff(u,t), diff(diff(u,t),t), numeric literals and 'C'
// constant placeholders.
struct ExprNode {
  enum class Kind { add, sub, mul, div, pow, neg, fun, num, cplace, var_t, state_u, d1, d2 };
  enum class Fun { sin, cos, exp, log };

  Kind kind = Kind::num;
  Fun fun = Fun::sin;
  double value = 0.0;   // num literal, or bound placeholder value
  double expo = 0.0;    // pow exponent
  int cidx = -1;        // placeholder ordinal (0-based)
  bool bound = false;   // placeholder has a value
  std::vector<ExprNode> children;

  bool operator==(const ExprNode&) const = default;
};

struct OdeExpr {
  ExprNode root;
  int order = 0;        // highest derivative order present
  int n_constants = 0;  // number of distinct placeholders

  bool operator==(const OdeExpr&) const = default;
};

// Known forcing term F(t); residuals are evaluated as D(...) - F(t).
using ForceFn = std::function<double(double)>;

// Parses an infix expression (grammar output or benchmark definition
// syntax) into an AST. Throws interpret/arity errors on malformed input.
OdeExpr interpret(const std::string& text);

// Canonical space-separated rendering; interpret(render(e)) == e for
// bound and unbound expressions alike.
std::string render(const OdeExpr& e, int precision = 6);

OdeExpr bind_constants(const OdeExpr& e, const std::vector<double>& values);

// Point evaluation. `consts` supplies values for unbound placeholders.
double eval(const OdeExpr& e, double t, double u, double du, double ddu,
            const double* consts = nullptr);

struct ResidualResult {
  Eigen::VectorXd residuals;
  bool finite = false;
  double l_de = 0.0;  // RMS of residuals; +inf when not finite
};

ResidualResult eval_residual(const OdeExpr& e, const Trajectory& traj,
                             const ForceFn& force = nullptr);

// Scale of the leftmost top-level term of the highest derivative order:
// the product of its numeric factors (bound placeholders included).
struct LeadingScale {
  double literal = 1.0;          // product of numeric literals
  std::vector<int> const_factors;  // placeholder ordinals multiplying in
  bool degenerate = false;       // literal == 0
  double value(const double* consts = nullptr) const;
};

LeadingScale leading_scale(const OdeExpr& e);

// Divides every top-level term by the leading scale so the highest
// derivative carries coefficient 1. Idempotent. Throws degenerate when
// the scale is zero.
OdeExpr normalize_highest_derivative(const OdeExpr& e);

// Node-weighted complexity: constants and t cost 1, u costs 2, first and
// second derivatives cost 6 and 10, every operator costs 1.
int complexity(const OdeExpr& e);

// Analytic probe solutions used by the trivial-candidate filter.
struct TrivialProbe {
  std::string name;
  std::function<double(double)> u, du, ddu;
};

const std::vector<TrivialProbe>& default_trivial_probes();

struct TrivialFilterConfig {
  double eps = 0.05;
  double t0 = 0.1;
  double t1 = 10.0;
  int n_points = 100;
};

// True when the normalized residual nearly vanishes on every probe
// solution, i.e. the candidate is an identity rather than an equation.
bool is_trivial(const OdeExpr& e, const ForceFn& force = nullptr,
                const TrivialFilterConfig& cfg = {});

std::string expr_to_json(const OdeExpr& e);
OdeExpr expr_from_json(const std::string& json_text);

// Flat evaluation program for search inner loops: placeholder values are
// taken from a caller-owned array so constant fitting never copies the
// tree.
class CompiledResidual {
 public:
  explicit CompiledResidual(const OdeExpr& e);

  double eval_point(double t, double u, double du, double ddu,
                    const double* consts) const;
  double leading(const double* consts) const { return scale_.value(consts); }
  bool leading_degenerate() const { return scale_.degenerate; }
  int order() const { return order_; }
  int n_constants() const { return n_constants_; }

  // True when the residual is affine in its highest-order derivative,
  // decided structurally on the tree.
  bool affine_in_top() const { return affine_; }

 private:
  struct Op {
    ExprNode::Kind kind;
    ExprNode::Fun fun;
    double imm;
    int cidx;
    int iexp;
  };
  std::vector<Op> ops_;  // post-order
  LeadingScale scale_;
  int order_ = 0;
  int n_constants_ = 0;
  bool affine_ = false;
  mutable std::vector<double> stack_;
};

}  // namespace odisc
