#pragma once

#include <map>
#include <string>
#include <vector>

#include "odisc/expr.hpp"
#include "odisc/grammar.hpp"
#include "odisc/trajectory.hpp"

namespace odisc {

// One benchmark problem: an implicit residual D(u), an optional separate
// force term F(t), a sampling window, and initial conditions. Closed-form
// solution channels are carried as expression text when known.
struct BenchProblem {
  std::string id;
  std::string suite;
  std::string residual_text;
  std::string force_text;  // empty when the force is part of the residual
  double force_period = 0.0;
  double t0 = 0.0;
  double t1 = 0.0;
  std::vector<double> initial_state;  // u(t0), and du(t0) for order two
  double fs = 0.0;
  std::string solution_text;
  std::string solution_d1_text;
  std::string solution_d2_text;

  bool has_solution() const { return !solution_text.empty(); }
  bool has_force() const { return !force_text.empty(); }
  int order() const;
  OdeExpr residual() const;
  // Residual with the force folded in, D(u) - F(t), as one expression.
  OdeExpr combined_residual() const;
  ForceFn force() const;  // nullptr when there is no separate force
};

// Per-suite grammar configuration. Paths are relative to the directory of
// the benchmark definition file.
struct SuiteGrammars {
  std::string generator_grammar;
  int generator_n_max = 0;
  std::string gvae_grammar;
  int gvae_n_max = 0;
};

struct BenchSet {
  std::string dir;  // directory the set was loaded from
  std::map<std::string, SuiteGrammars> suites;
  std::vector<BenchProblem> problems;

  const BenchProblem& find(const std::string& id) const;
  std::vector<const BenchProblem*> in_suite(const std::string& suite) const;
};

BenchSet load_bench_set(const std::string& json_path);

Grammar load_generator_grammar(const BenchSet& set, const std::string& suite);
Grammar load_gvae_grammar(const BenchSet& set, const std::string& suite);

// Noise-free truth on the problem's native grid: evaluated from the closed
// form when one is recorded, otherwise integrated with tight tolerances.
// Throws Error{Code::diverged} when integration fails.
Trajectory ground_truth(const BenchProblem& p);

}  // namespace odisc
