#include <odisc/search.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include <odisc/common.hpp>
#include <odisc/ode_solver.hpp>

namespace odisc {

namespace {

void validate(const SearchConfig& cfg) {
  if (cfg.population < 2)
    throw Error(Error::Code::config, "population must be >= 2");
  if (cfg.generations < 1)
    throw Error(Error::Code::config, "generations must be >= 1");
  if (cfg.sigma0 <= 0.0)
    throw Error(Error::Code::config, "sigma0 must be > 0");
  if (cfg.alpha < 0.0 || cfg.alpha > 1.0)
    throw Error(Error::Code::config, "alpha must lie in [0, 1]");
  if (cfg.theta_k < 1)
    throw Error(Error::Code::config, "theta_k must be >= 1");
}

ExprNode make_closed(ExprNode root) {
  ExprNode sub;
  sub.kind = ExprNode::Kind::sub;
  ExprNode d1;
  d1.kind = ExprNode::Kind::d1;
  sub.children.push_back(std::move(root));
  sub.children.push_back(d1);
  return sub;
}

// Residual RMS over the trajectory divided by the leading coefficient
// of the highest derivative. Returns kPenaltyHard for non-finite points
// or a vanishing leading scale.
double normalized_l_de(const CompiledResidual& cr, const Trajectory& data,
                       const ForceFn& force, const double* consts) {
  const double lead = cr.leading(consts);
  if (!std::isfinite(lead) || std::abs(lead) < 1e-12) return kPenaltyHard;
  const Eigen::Index n = data.size();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t = data.t[i];
    double r = cr.eval_point(t, data.u[i], cr.order() >= 1 ? data.du[i] : 0.0,
                             cr.order() >= 2 ? data.ddu[i] : 0.0, consts);
    if (force) r -= force(t);
    if (!std::isfinite(r)) return kPenaltyHard;
    acc += r * r;
  }
  const double rms = std::sqrt(acc / static_cast<double>(n));
  const double out = rms / std::abs(lead);
  return std::isfinite(out) ? out : kPenaltyHard;
}

double standardized_channel(const Eigen::VectorXd& sol,
                            const Eigen::VectorXd& ref) {
  const double denom = ref.squaredNorm() / static_cast<double>(ref.size());
  if (!(denom > 1e-300)) return -1.0;
  const double mse =
      (sol - ref).squaredNorm() / static_cast<double>(ref.size());
  return mse / denom;
}

// Sum of standardized channel errors between the solved candidate and
// the reference channels; negative on a degenerate normalization.
double solution_loss(const Trajectory& sol, const Trajectory& data) {
  double total = standardized_channel(sol.u, data.u);
  if (total < 0.0) return -1.0;
  if (data.has_du() && sol.has_du()) {
    const double c = standardized_channel(sol.du, data.du);
    if (c < 0.0) return -1.0;
    total += c;
  }
  if (data.has_ddu() && sol.has_ddu()) {
    const double c = standardized_channel(sol.ddu, data.ddu);
    if (c < 0.0) return -1.0;
    total += c;
  }
  return total;
}

void attempt_solve(CandidateEval& ev, const OdeExpr& closed,
                   const Trajectory& data, const ForceFn& force,
                   const SearchConfig& cfg) {
  IvpSpec spec;
  spec.residual = bind_constants(closed, ev.constants);
  spec.force = force;
  spec.grid = data.t;
  spec.y0.push_back(data.u[0]);
  if (spec.residual.order >= 2) spec.y0.push_back(data.du[0]);
  spec.rtol = cfg.solver_rtol;
  spec.atol = cfg.solver_atol;
  IvpOutcome out = solve_ivp(spec);
  if (!out.success) {
    ev.solve_failed = true;
    return;
  }
  const double l = solution_loss(out.traj, data);
  if (l < 0.0 || !std::isfinite(l)) {
    ev.solve_failed = true;
    return;
  }
  ev.l_sol = l;
}

// Recomputes the gate-dependent fields from the measured losses.
void apply_gate(CandidateEval& ev, const Trajectory& data,
                const SearchConfig& cfg, double theta_de_now) {
  const double n_s = static_cast<double>(data.size());
  auto criterion = [&](double accuracy) {
    return cfg.alpha * ev.complexity + (1.0 - cfg.alpha) * n_s * accuracy;
  };
  if (ev.trivial || ev.degenerate) {
    ev.l_ic = kPenaltyHard;
    ev.selection = kPenaltyHard;
    ev.gate_passed = false;
    return;
  }
  ev.gate_passed = ev.l_de < theta_de_now;
  if (!cfg.solve_ode) {
    ev.l_ic = criterion(ev.l_de);
    ev.selection = cfg.selection == SelectionObjective::residual
                       ? ev.l_de
                       : ev.l_ic;
    return;
  }
  if (!ev.gate_passed || ev.solve_failed) {
    ev.l_ic = criterion(ev.l_de);
    ev.selection = kPenaltyGated + ev.l_de;
    return;
  }
  const double accuracy = ev.l_sol ? *ev.l_sol : ev.l_de;
  ev.l_ic = criterion(accuracy);
  ev.selection = cfg.selection == SelectionObjective::residual ? ev.l_de
                                                               : ev.l_ic;
}

}  // namespace

double adapt_threshold(const std::vector<double>& losses, double current,
                       int k, double buffer) {
  std::vector<double> usable;
  usable.reserve(losses.size());
  for (double l : losses)
    if (std::isfinite(l) && l < kPenaltyGated) usable.push_back(l);
  if (static_cast<int>(usable.size()) < k) return current;
  std::partial_sort(usable.begin(), usable.begin() + k, usable.end());
  const double mean =
      std::accumulate(usable.begin(), usable.begin() + k, 0.0) / k;
  return (1.0 + buffer) * mean;
}

CandidateEval evaluate_candidate(const std::string& skeleton_text,
                                 const Trajectory& data, const ForceFn& force,
                                 const SearchConfig& cfg,
                                 double theta_de_now) {
  if (data.size() < 2)
    throw Error(Error::Code::data, "candidate evaluation needs a trajectory");
  CandidateEval ev;
  ev.skeleton = skeleton_text;

  OdeExpr closed;
  try {
    closed = interpret(skeleton_text);
  } catch (const Error&) {
    ev.degenerate = true;
    apply_gate(ev, data, cfg, theta_de_now);
    return ev;
  }
  if (cfg.closure == ClosureMode::append_neg_du) {
    closed.root = make_closed(std::move(closed.root));
    closed.order = std::max(closed.order, 1);
  }
  ev.equation = render(closed);
  ev.complexity = complexity(closed);

  const CompiledResidual cr(closed);
  if (cr.order() < 1 || (cr.order() >= 1 && !data.has_du()) ||
      (cr.order() >= 2 && !data.has_ddu())) {
    ev.degenerate = true;
    apply_gate(ev, data, cfg, theta_de_now);
    return ev;
  }

  const int n_c = cr.n_constants();
  const bool fix_first =
      cfg.closure == ClosureMode::fix_first_constant && n_c >= 1;
  const int n_free = fix_first ? n_c - 1 : n_c;

  if (n_c == 0 && is_trivial(closed, force, cfg.trivial)) {
    ev.trivial = true;
    ev.l_de = normalized_l_de(cr, data, force, nullptr);
    apply_gate(ev, data, cfg, theta_de_now);
    return ev;
  }

  std::vector<double> full(static_cast<std::size_t>(n_c), 1.0);
  auto objective = [&](const Eigen::VectorXd& x) {
    for (int i = 0; i < n_free; ++i)
      full[static_cast<std::size_t>(fix_first ? i + 1 : i)] = x[i];
    return normalized_l_de(cr, data, force, full.data());
  };

  NelderMeadResult fit =
      nelder_mead(objective, Eigen::VectorXd::Ones(n_free), cfg.inner);
  if (cfg.multistart && n_free > 0 && fit.best_f > cfg.theta_de) {
    auto rng = make_rng(cfg.seed, 0x636f6e7374ull, fnv1a(skeleton_text));
    std::uniform_real_distribution<double> unif(-2.0, 2.0);
    Eigen::VectorXd x0(n_free);
    for (int i = 0; i < n_free; ++i) x0[i] = unif(rng);
    NelderMeadResult retry = nelder_mead(objective, x0, cfg.inner);
    if (retry.best_f < fit.best_f) fit = retry;
  }

  for (int i = 0; i < n_free; ++i)
    full[static_cast<std::size_t>(fix_first ? i + 1 : i)] = fit.best_x[i];
  ev.constants = full;
  ev.l_de = fit.best_f;
  if (ev.l_de >= kPenaltyHard) {
    ev.degenerate = true;
    apply_gate(ev, data, cfg, theta_de_now);
    return ev;
  }

  const OdeExpr bound = bind_constants(closed, full);
  ev.equation = render(bound);
  if (is_trivial(bound, force, cfg.trivial)) {
    ev.trivial = true;
    apply_gate(ev, data, cfg, theta_de_now);
    return ev;
  }

  if (cfg.solve_ode && ev.l_de < theta_de_now)
    attempt_solve(ev, closed, data, force, cfg);
  apply_gate(ev, data, cfg, theta_de_now);
  return ev;
}

DiscoveryResult discover(const GvaeModel& m, const Grammar& g,
                         const Trajectory& smoothed, const ForceFn& force,
                         const SearchConfig& cfg) {
  validate(cfg);
  if (m.grammar_hash() != g.hash())
    throw Error(Error::Code::config,
                "model was trained on a different grammar");
  const auto t_start = std::chrono::steady_clock::now();

  DiscoveryResult res;
  res.seed = cfg.seed;
  {
    std::string c;
    c += std::to_string(cfg.population) + '|';
    c += std::to_string(cfg.generations) + '|';
    c += format_double(cfg.sigma0) + '|';
    c += format_double(cfg.theta_de) + '|';
    c += std::to_string(cfg.theta_k) + '|';
    c += format_double(cfg.theta_buffer) + '|';
    c += format_double(cfg.alpha) + '|';
    c += std::to_string(static_cast<int>(cfg.closure)) + '|';
    c += std::to_string(static_cast<int>(cfg.selection)) + '|';
    c += std::to_string(cfg.solve_ode) + '|';
    c += std::to_string(cfg.multistart) + '|';
    c += format_double(cfg.trivial.eps) + '|';
    c += std::to_string(cfg.inner.max_evals) + '|';
    c += format_double(cfg.inner.x_tol) + '|';
    c += format_double(cfg.inner.f_tol) + '|';
    c += format_double(cfg.solver_rtol) + '|';
    c += format_double(cfg.solver_atol) + '|';
    c += std::to_string(cfg.seed);
    res.config_hash = fnv1a(c);
  }

  struct CacheEntry {
    CandidateEval eval;
    Eigen::VectorXd z;
    int generation = 0;
  };
  std::map<std::string, CacheEntry> cache;
  double theta = cfg.theta_de;
  int gen_now = 1;
  std::vector<double> window;

  auto objective = [&](const Eigen::VectorXd& z) {
    const RuleSequence seq = decode_sequence(m, z, g, DecodeMode::argmax, 0);
    const std::string text = generate(g, seq);
    auto it = cache.find(text);
    if (it == cache.end()) {
      CacheEntry entry;
      entry.eval = evaluate_candidate(text, smoothed, force, cfg, theta);
      entry.z = z;
      entry.generation = gen_now;
      it = cache.emplace(text, std::move(entry)).first;
    } else {
      CandidateEval& ev = it->second.eval;
      const bool newly_passing = cfg.solve_ode && !ev.trivial &&
                                 !ev.degenerate && ev.l_de < theta &&
                                 !ev.l_sol && !ev.solve_failed;
      if (newly_passing) {
        OdeExpr closed = interpret(ev.skeleton);
        if (cfg.closure == ClosureMode::append_neg_du) {
          closed.root = make_closed(std::move(closed.root));
          closed.order = std::max(closed.order, 1);
        }
        attempt_solve(ev, closed, smoothed, force, cfg);
      }
      apply_gate(ev, smoothed, cfg, theta);
    }
    ++res.evaluations;
    window.push_back(it->second.eval.l_de);
    return it->second.eval.selection;
  };

  CmaesConfig cc;
  cc.lambda = cfg.population;
  cc.sigma0 = cfg.sigma0;
  cc.max_generations = cfg.generations;
  cc.seed = cfg.seed;
  cc.on_generation = [&](int gen) {
    GenerationLog row;
    row.generation = gen;
    row.theta_de = theta;
    row.best_l_de = kPenaltyHard;
    row.best_selection = kPenaltyHard;
    for (const auto& [text, entry] : cache) {
      (void)text;
      row.best_l_de = std::min(row.best_l_de, entry.eval.l_de);
      row.best_selection = std::min(row.best_selection, entry.eval.selection);
    }
    res.log.push_back(row);
    theta = adapt_threshold(window, theta, cfg.theta_k, cfg.theta_buffer);
    window.clear();
    gen_now = gen + 1;
  };

  cmaes_minimize(objective, m.d_z(), cc);

  res.unique_skeletons = static_cast<int>(cache.size());
  for (auto& [text, entry] : cache) {
    (void)text;
    RankedCandidate rc;
    rc.eval = std::move(entry.eval);
    rc.z = std::move(entry.z);
    rc.generation = entry.generation;
    res.candidates.push_back(std::move(rc));
  }
  std::sort(res.candidates.begin(), res.candidates.end(),
            [](const RankedCandidate& a, const RankedCandidate& b) {
              if (a.eval.selection != b.eval.selection)
                return a.eval.selection < b.eval.selection;
              return a.eval.skeleton < b.eval.skeleton;
            });
  if (res.candidates.empty() ||
      res.candidates.front().eval.selection >= kPenaltyGated) {
    res.all_penalized = true;
    res.candidates.clear();
  }
  res.wall_seconds = std::chrono::duration<double>(
                         std::chrono::steady_clock::now() - t_start)
                         .count();
  return res;
}

std::string discovery_result_to_json(const DiscoveryResult& r,
                                     bool include_wall_time) {
  nlohmann::json j;
  j["seed"] = r.seed;
  j["config_hash"] = hex64(r.config_hash);
  j["evaluations"] = r.evaluations;
  j["unique_skeletons"] = r.unique_skeletons;
  j["all_penalized"] = r.all_penalized;
  if (include_wall_time) j["wall_seconds"] = r.wall_seconds;
  j["candidates"] = nlohmann::json::array();
  for (const RankedCandidate& rc : r.candidates) {
    nlohmann::json c;
    c["skeleton"] = rc.eval.skeleton;
    c["equation"] = rc.eval.equation;
    c["constants"] = rc.eval.constants;
    c["l_de"] = rc.eval.l_de;
    if (rc.eval.l_sol) c["l_sol"] = *rc.eval.l_sol;
    c["l_ic"] = rc.eval.l_ic;
    c["selection"] = rc.eval.selection;
    c["complexity"] = rc.eval.complexity;
    c["trivial"] = rc.eval.trivial;
    c["degenerate"] = rc.eval.degenerate;
    c["gate_passed"] = rc.eval.gate_passed;
    c["solve_failed"] = rc.eval.solve_failed;
    c["generation"] = rc.generation;
    c["z"] = std::vector<double>(rc.z.data(), rc.z.data() + rc.z.size());
    j["candidates"].push_back(std::move(c));
  }
  j["log"] = nlohmann::json::array();
  for (const GenerationLog& g : r.log) {
    nlohmann::json row;
    row["generation"] = g.generation;
    row["best_l_de"] = g.best_l_de;
    row["theta_de"] = g.theta_de;
    row["best_selection"] = g.best_selection;
    j["log"].push_back(std::move(row));
  }
  return j.dump(2);
}

std::string discovery_log_csv(const DiscoveryResult& r) {
  std::string out = "generation,best_l_de,theta_de,best_selection\n";
  for (const GenerationLog& g : r.log) {
    out += std::to_string(g.generation);
    out += ',';
    out += format_double(g.best_l_de, 10);
    out += ',';
    out += format_double(g.theta_de, 10);
    out += ',';
    out += format_double(g.best_selection, 10);
    out += '\n';
  }
  return out;
}

}  // namespace odisc
