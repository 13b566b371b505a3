#include "odisc/bench_data.hpp"

#include <memory>
#include <utility>

#include <nlohmann/json.hpp>

#include "odisc/common.hpp"
#include "odisc/ode_solver.hpp"

namespace odisc {
namespace {

using nlohmann::json;

std::string dir_of(const std::string& path) {
  auto pos = path.find_last_of('/');
  if (pos == std::string::npos) return ".";
  if (pos == 0) return "/";
  return path.substr(0, pos);
}

BenchProblem problem_from_json(const json& j) {
  BenchProblem p;
  p.id = j.at("id").get<std::string>();
  p.suite = j.at("suite").get<std::string>();
  p.residual_text = j.at("residual").get<std::string>();
  p.force_text = j.value("force", std::string());
  p.force_period = j.value("force_period", 0.0);
  const auto& domain = j.at("domain");
  if (!domain.is_array() || domain.size() != 2)
    throw Error(Error::Code::data, p.id + ": domain must be [t0, t1]");
  p.t0 = domain[0].get<double>();
  p.t1 = domain[1].get<double>();
  p.initial_state = j.at("ic").get<std::vector<double>>();
  p.fs = j.at("fs").get<double>();
  p.solution_text = j.value("solution", std::string());
  p.solution_d1_text = j.value("solution_d1", std::string());
  p.solution_d2_text = j.value("solution_d2", std::string());
  if (p.t1 <= p.t0)
    throw Error(Error::Code::data, p.id + ": empty domain");
  if (p.fs <= 0.0)
    throw Error(Error::Code::data, p.id + ": fs must be positive");
  return p;
}

SuiteGrammars suite_from_json(const json& j) {
  SuiteGrammars s;
  s.generator_grammar = j.at("generator_grammar").get<std::string>();
  s.generator_n_max = j.at("generator_n_max").get<int>();
  s.gvae_grammar = j.at("gvae_grammar").get<std::string>();
  s.gvae_n_max = j.at("gvae_n_max").get<int>();
  return s;
}

Eigen::VectorXd eval_on_grid(const OdeExpr& e, const Eigen::VectorXd& t) {
  Eigen::VectorXd out(t.size());
  for (Eigen::Index i = 0; i < t.size(); ++i)
    out[i] = eval(e, t[i], 0.0, 0.0, 0.0);
  return out;
}

}  // namespace

int BenchProblem::order() const { return interpret(residual_text).order; }

OdeExpr BenchProblem::residual() const { return interpret(residual_text); }

OdeExpr BenchProblem::combined_residual() const {
  OdeExpr res = interpret(residual_text);
  if (force_text.empty()) return res;
  OdeExpr f = interpret(force_text);
  ExprNode root;
  root.kind = ExprNode::Kind::sub;
  root.children = {std::move(res.root), std::move(f.root)};
  return OdeExpr{std::move(root), std::max(res.order, f.order),
                 res.n_constants + f.n_constants};
}

ForceFn BenchProblem::force() const {
  if (force_text.empty()) return nullptr;
  OdeExpr f = interpret(force_text);
  if (f.order > 0)
    throw Error(Error::Code::data, id + ": force depends on u");
  return [f](double t) { return eval(f, t, 0.0, 0.0, 0.0); };
}

const BenchProblem& BenchSet::find(const std::string& id) const {
  for (const auto& p : problems)
    if (p.id == id) return p;
  throw Error(Error::Code::data, "unknown benchmark problem: " + id);
}

std::vector<const BenchProblem*> BenchSet::in_suite(
    const std::string& suite) const {
  std::vector<const BenchProblem*> out;
  for (const auto& p : problems)
    if (p.suite == suite) out.push_back(&p);
  return out;
}

BenchSet load_bench_set(const std::string& json_path) {
  json j;
  try {
    j = json::parse(read_text_file(json_path));
  } catch (const json::exception& ex) {
    throw Error(Error::Code::data,
                std::string("benchmark definitions: ") + ex.what());
  }
  BenchSet set;
  set.dir = dir_of(json_path);
  try {
    for (const auto& [name, sj] : j.at("suites").items())
      set.suites.emplace(name, suite_from_json(sj));
    for (const auto& pj : j.at("problems"))
      set.problems.push_back(problem_from_json(pj));
  } catch (const json::exception& ex) {
    throw Error(Error::Code::data,
                std::string("benchmark definitions: ") + ex.what());
  }
  for (const auto& p : set.problems)
    if (!set.suites.count(p.suite))
      throw Error(Error::Code::data, p.id + ": unknown suite " + p.suite);
  return set;
}

namespace {

const SuiteGrammars& suite_entry(const BenchSet& set, const std::string& suite) {
  auto it = set.suites.find(suite);
  if (it == set.suites.end())
    throw Error(Error::Code::data, "unknown suite: " + suite);
  return it->second;
}

}  // namespace

Grammar load_generator_grammar(const BenchSet& set, const std::string& suite) {
  const auto& s = suite_entry(set, suite);
  return load_grammar_file(set.dir + "/" + s.generator_grammar,
                           s.generator_n_max);
}

Grammar load_gvae_grammar(const BenchSet& set, const std::string& suite) {
  const auto& s = suite_entry(set, suite);
  return load_grammar_file(set.dir + "/" + s.gvae_grammar, s.gvae_n_max);
}

Trajectory ground_truth(const BenchProblem& p) {
  if (p.has_solution()) {
    Trajectory traj;
    traj.t = sample_grid(p.t0, p.t1, p.fs);
    traj.fs = p.fs;
    traj.u = eval_on_grid(interpret(p.solution_text), traj.t);
    if (!p.solution_d1_text.empty())
      traj.du = eval_on_grid(interpret(p.solution_d1_text), traj.t);
    if (!p.solution_d2_text.empty())
      traj.ddu = eval_on_grid(interpret(p.solution_d2_text), traj.t);
    return traj;
  }
  IvpSpec spec;
  spec.residual = p.residual();
  spec.force = p.force();
  spec.grid = sample_grid(p.t0, p.t1, p.fs);
  spec.y0 = p.initial_state;
  spec.rtol = 1e-10;
  spec.atol = 1e-12;
  IvpOutcome outcome = solve_ivp(spec);
  if (!outcome.success)
    throw Error(Error::Code::diverged,
                p.id + ": ground truth integration failed at t=" +
                    format_double(outcome.t_fail, 6) + " (" + outcome.message +
                    ")");
  return outcome.traj;
}

}  // namespace odisc
