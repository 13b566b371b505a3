#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include <odisc/common.hpp>
#include <odisc/ode_solver.hpp>

namespace odisc::cli {
namespace {

using nlohmann::json;

namespace fs = std::filesystem;

void ensure_out(const RunConfig& cfg) { fs::create_directories(cfg.out); }

void put_provenance(json& j, const RunConfig& cfg) {
  j["config_hash"] = hex64(run_config_hash(cfg));
  j["seed"] = cfg.seed;
  j["code_version"] = kVersion;
}

std::vector<std::string> split_tokens(const std::string& text) {
  std::vector<std::string> toks;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) toks.push_back(tok);
  return toks;
}

std::string join_tokens(const std::vector<std::string>& toks) {
  std::string out;
  for (size_t i = 0; i < toks.size(); ++i) {
    if (i) out += ' ';
    out += toks[i];
  }
  return out;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::vector<std::string> lines;
  std::istringstream in(read_text_file(path));
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) lines.push_back(line);
  return lines;
}

const BenchProblem& find_or_list(const BenchSet& set, const std::string& id) {
  for (const auto& p : set.problems)
    if (p.id == id) return p;
  std::string msg = "unknown benchmark id \"" + id + "\"; valid ids:";
  for (const auto& p : set.problems) msg += " " + p.id;
  throw Error(Error::Code::config, msg);
}

Grammar load_role_grammar(const BenchSet& set, const RunConfig& cfg) {
  if (!set.suites.count(cfg.suite)) {
    std::string msg = "unknown suite \"" + cfg.suite + "\"; valid suites:";
    for (const auto& [name, _] : set.suites) msg += " " + name;
    throw Error(Error::Code::config, msg);
  }
  return cfg.grammar_role == "generator"
             ? load_generator_grammar(set, cfg.suite)
             : load_gvae_grammar(set, cfg.suite);
}

// Observation noise, then the neural smoother when the pipeline asks
// for it; otherwise the observations pass through. The exposed
// derivative channels follow cfg.order.
Trajectory smoothed_observations(const RunConfig& cfg, const Trajectory& truth,
                                 std::uint64_t run_seed, std::ostream& log) {
  Trajectory obs = cfg.noise > 0.0
                       ? add_noise(truth, cfg.noise, mix_seed(run_seed, 11))
                       : truth;
  Trajectory out;
  if (cfg.smooth && (cfg.noise > 0.0 || !obs.has_du())) {
    SmootherConfig sc = cfg.smoother;
    sc.seed = mix_seed(run_seed, 12);
    SmootherNet net;
    if (sc.beta_ddu > 0.0 && obs.has_ddu()) {
      Trajectory acc = obs;
      net = fit_on_acceleration(acc, sc);
    } else {
      net = fit_on_displacement(obs, sc);
    }
    out = net.smooth(obs.t);
    out.fs = obs.fs;
  } else {
    out = obs;
  }
  if (cfg.order < 2) out.ddu.resize(0);
  log << "observations: n=" << out.size() << " noise=" << cfg.noise
      << " smoothed=" << (out.provenance == Trajectory::Provenance::smoothed)
      << "\n";
  return out;
}

GvaeModel load_model(const RunConfig& cfg, const Grammar& g) {
  GvaeModel m = GvaeModel::deserialize(read_text_file(cfg.checkpoint));
  if (m.grammar_hash() != g.hash())
    throw Error(Error::Code::config,
                "checkpoint " + cfg.checkpoint +
                    " was trained on a different grammar");
  return m;
}

struct SolveScore {
  bool solved = false;
  double l2_u = 1.0;
  double l2_du = 1.0;
  double l2_ddu = 1.0;
};

// Solves a fully bound candidate equation from the given initial values
// and scores it against the reference channels (raw ratios; flooring is
// the caller's concern).
SolveScore solve_and_score(const std::string& equation, const ForceFn& force,
                           const Trajectory& reference,
                           const std::vector<double>& y0, double rtol,
                           double atol) {
  SolveScore s;
  IvpSpec spec;
  try {
    spec.residual = interpret(equation);
  } catch (const Error&) {
    return s;
  }
  spec.force = force;
  spec.grid = reference.t;
  spec.y0 = y0;
  spec.rtol = rtol;
  spec.atol = atol;
  IvpOutcome out;
  try {
    out = solve_ivp(spec);
  } catch (const Error&) {
    return s;
  }
  if (!out.success) return s;
  s.solved = true;
  s.l2_u = relative_l2(out.traj.u, reference.u);
  if (reference.has_du() && out.traj.has_du())
    s.l2_du = relative_l2(out.traj.du, reference.du);
  if (reference.has_ddu() && out.traj.has_ddu())
    s.l2_ddu = relative_l2(out.traj.ddu, reference.ddu);
  return s;
}

std::vector<double> initial_values(const Trajectory& data, int order) {
  std::vector<double> y0{data.u[0]};
  if (order >= 2) {
    if (!data.has_du())
      throw Error(Error::Code::missing_channel,
                  "order-two solve needs a first-derivative channel");
    y0.push_back(data.du[0]);
  }
  return y0;
}

std::string render_report(const RunConfig& cfg, const std::string& target,
                          const DiscoveryResult& r) {
  std::ostringstream out;
  out << "discovery report\n";
  out << "target: " << target << "\n";
  out << "config_hash: " << hex64(run_config_hash(cfg)) << "\n";
  out << "seed: " << cfg.seed << "\n";
  out << "evaluations: " << r.evaluations
      << "  unique skeletons: " << r.unique_skeletons << "\n";
  if (r.all_penalized) {
    out << "no candidate passed the filters\n";
    return out.str();
  }
  int k = std::min<int>(cfg.top_k, static_cast<int>(r.candidates.size()));
  for (int i = 0; i < k; ++i) {
    const CandidateEval& e = r.candidates[i].eval;
    out << "rank " << (i + 1) << "  selection " << format_double(e.selection, 6)
        << "  l_de " << format_double(e.l_de, 6);
    if (e.l_sol) out << "  l_sol " << format_double(*e.l_sol, 6);
    out << "  complexity " << e.complexity << "\n";
    out << "  " << e.equation << " = 0\n";
  }
  return out.str();
}

}  // namespace

std::string strip_force_parens(const std::string& text) {
  std::vector<std::string> toks = split_tokens(text);
  if (toks.size() < 4 || toks.back() != ")") return text;
  int depth = 0;
  int open = -1;
  for (int i = static_cast<int>(toks.size()) - 1; i >= 0; --i) {
    if (toks[i] == ")") ++depth;
    if (toks[i] == "(") {
      --depth;
      if (depth == 0) {
        open = i;
        break;
      }
    }
  }
  if (open <= 0 || toks[open - 1] != "-") return text;
  int before = 0;
  for (int i = 0; i < open - 1; ++i) {
    if (toks[i] == "(") ++before;
    if (toks[i] == ")") --before;
  }
  if (before != 0) return text;
  toks.pop_back();
  toks.erase(toks.begin() + open);
  return join_tokens(toks);
}

GenStats cmd_gen(const RunConfig& cfg, std::ostream& log) {
  ensure_out(cfg);
  BenchSet set = load_bench_set(cfg.data);
  Grammar target = load_role_grammar(set, cfg);
  const SuiteGrammars& sg = set.suites.at(cfg.suite);
  const bool convert = cfg.grammar_role == "gvae" &&
                       sg.generator_grammar != sg.gvae_grammar;
  Grammar source = convert ? load_generator_grammar(set, cfg.suite)
                           : Grammar(target);

  GenStats st;
  st.requested = cfg.dataset_size;
  if (cfg.dataset_size == 0)
    log << "warning: dataset of size 0 requested; writing empty files\n";

  auto rng = make_rng(cfg.seed, 17);
  std::set<std::string> seen;
  std::vector<std::string> texts;
  const long cap = 1000L * cfg.dataset_size + 1000;
  while (static_cast<int>(texts.size()) < cfg.dataset_size &&
         st.sampled < cap) {
    RuleSequence s = sample(source, rng);
    ++st.sampled;
    std::string text = generate(source, s);
    if (convert) {
      text = strip_force_parens(text);
      try {
        parse(target, text);
      } catch (const Error&) {
        ++st.dropped;
        continue;
      }
    }
    if (cfg.dedup && !seen.insert(text).second) continue;
    texts.push_back(std::move(text));
  }
  if (static_cast<int>(texts.size()) < cfg.dataset_size)
    log << "warning: sampling exhausted after " << st.sampled
        << " draws; dataset has " << texts.size() << " skeletons\n";

  const int n = static_cast<int>(texts.size());
  st.val_count = static_cast<int>(n * cfg.val_fraction);
  st.train_count = n - st.val_count;

  std::string train_txt, val_txt, train_rules, val_rules;
  for (int i = 0; i < n; ++i) {
    const RuleSequence s = parse(target, texts[i]);
    std::string rules;
    for (int k = 0; k < s.n_rules; ++k) {
      if (k) rules += ' ';
      rules += std::to_string(s.indices[k]);
    }
    if (i < st.train_count) {
      train_txt += texts[i] + "\n";
      train_rules += rules + "\n";
    } else {
      val_txt += texts[i] + "\n";
      val_rules += rules + "\n";
    }
  }
  write_text_file(cfg.out + "/train.txt", train_txt);
  write_text_file(cfg.out + "/val.txt", val_txt);
  write_text_file(cfg.out + "/train_rules.txt", train_rules);
  write_text_file(cfg.out + "/val_rules.txt", val_rules);

  json meta;
  put_provenance(meta, cfg);
  meta["suite"] = cfg.suite;
  meta["role"] = cfg.grammar_role;
  meta["grammar_hash"] = hex64(target.hash());
  meta["n_max"] = target.n_max;
  meta["dedup"] = cfg.dedup;
  meta["requested"] = st.requested;
  meta["sampled"] = st.sampled;
  meta["dropped"] = st.dropped;
  meta["drop_rate"] =
      st.sampled > 0 ? static_cast<double>(st.dropped) / st.sampled : 0.0;
  meta["train_count"] = st.train_count;
  meta["val_count"] = st.val_count;
  write_text_file(cfg.out + "/meta.json", meta.dump(2) + "\n");

  log << "generated " << n << " skeletons (" << st.train_count << " train, "
      << st.val_count << " val), dropped " << st.dropped << " of "
      << st.sampled << " draws\n";
  return st;
}

TrainReport cmd_train(const RunConfig& cfg, bool resume, std::ostream& log) {
  ensure_out(cfg);
  BenchSet set = load_bench_set(cfg.data);
  Grammar g = load_role_grammar(set, cfg);

  json meta = json::parse(read_text_file(cfg.dataset_dir + "/meta.json"));
  if (meta.value("grammar_hash", "") != hex64(g.hash()))
    throw Error(Error::Code::config,
                "dataset in " + cfg.dataset_dir +
                    " was generated under a different grammar");

  auto encode_file = [&](const std::string& path) {
    std::vector<OneHotMatrix> out;
    for (const std::string& line : read_lines(path))
      out.push_back(encode_one_hot(g, parse(g, line)));
    return out;
  };
  std::vector<OneHotMatrix> train = encode_file(cfg.dataset_dir + "/train.txt");
  std::vector<OneHotMatrix> val = encode_file(cfg.dataset_dir + "/val.txt");
  if (train.empty())
    throw Error(Error::Code::data, "training split is empty");

  TrainConfig tc = cfg.train;
  int offset = 0;
  std::string old_log;
  TrainResult r;
  if (resume) {
    GvaeModel init = load_model(cfg, g);
    if (fs::exists(cfg.out + "/log.csv")) {
      old_log = read_text_file(cfg.out + "/log.csv");
      std::vector<std::string> lines = read_lines(cfg.out + "/log.csv");
      if (lines.size() > 1)
        offset = std::stoi(lines.back().substr(0, lines.back().find(',')));
    }
    tc.seed = mix_seed(cfg.seed, 19, static_cast<std::uint64_t>(offset));
    log << "resuming from epoch " << offset << "\n";
    r = train_gvae(std::move(init), train, val, tc);
  } else {
    r = train_gvae(g, cfg.model, train, val, tc);
  }

  for (EpochLog& e : r.log) e.epoch += offset;
  std::string csv = train_log_csv(r.log);
  if (!old_log.empty()) {
    // drop the fresh header and append to the existing rows
    csv = old_log + csv.substr(csv.find('\n') + 1);
  }
  write_text_file(cfg.out + "/log.csv", csv);
  write_text_file(cfg.out + "/checkpoint.bin", r.model.serialize());

  TrainReport rep;
  rep.epochs_run = static_cast<int>(r.log.size());
  rep.best_epoch = r.best_epoch + offset;
  rep.best_monitored = r.best_monitored;
  rep.recon_train = reconstruction_rate(r.model, g, train);
  rep.recon_val = val.empty() ? 0.0 : reconstruction_rate(r.model, g, val);
  rep.aborted_non_finite = r.aborted_non_finite;

  json rj;
  put_provenance(rj, cfg);
  rj["epochs_run"] = rep.epochs_run;
  rj["best_epoch"] = rep.best_epoch;
  rj["best_monitored"] = rep.best_monitored;
  rj["recon_train"] = rep.recon_train;
  rj["recon_val"] = rep.recon_val;
  rj["aborted_non_finite"] = rep.aborted_non_finite;
  write_text_file(cfg.out + "/report.json", rj.dump(2) + "\n");

  log << "trained " << rep.epochs_run << " epochs, best "
      << format_double(rep.best_monitored, 6) << " at epoch " << rep.best_epoch
      << ", reconstruction train " << format_double(rep.recon_train, 4)
      << " val " << format_double(rep.recon_val, 4) << "\n";
  if (rep.aborted_non_finite)
    log << "warning: training aborted on a non-finite loss; checkpoint holds "
           "the last good parameters\n";
  return rep;
}

DiscoveryResult cmd_discover(const RunConfig& cfg, const std::string& target,
                             std::ostream& log) {
  ensure_out(cfg);
  BenchSet set = load_bench_set(cfg.data);

  Trajectory truth;
  ForceFn force;
  if (fs::exists(target) && target.size() > 4 &&
      target.substr(target.size() - 4) == ".csv") {
    truth = trajectory_from_csv(read_text_file(target));
  } else {
    const BenchProblem& p = find_or_list(set, target);
    truth = ground_truth(p);
    force = p.force();
  }

  Trajectory data = smoothed_observations(cfg, truth, cfg.seed, log);
  Grammar g = load_gvae_grammar(set, cfg.suite);
  GvaeModel m = load_model(cfg, g);

  DiscoveryResult r = discover(m, g, data, force, cfg.search);
  write_text_file(cfg.out + "/result.json", discovery_result_to_json(r) + "\n");
  write_text_file(cfg.out + "/search_log.csv", discovery_log_csv(r));
  write_text_file(cfg.out + "/report.txt", render_report(cfg, target, r));

  if (r.all_penalized)
    log << "every candidate was penalized; see " << cfg.out << "/result.json\n";
  else
    log << "top candidate: " << r.candidates.front().eval.equation
        << " = 0 (selection "
        << format_double(r.candidates.front().eval.selection, 6) << ")\n";
  return r;
}

std::string cmd_bench(const RunConfig& cfg, int suite, std::ostream& log) {
  if (suite < 1 || suite > 3)
    throw Error(Error::Code::config, "suite must be 1, 2 or 3");
  ensure_out(cfg);
  BenchSet set = load_bench_set(cfg.data);
  const std::string suite_name = "bench" + std::to_string(suite);

  std::vector<const BenchProblem*> problems;
  if (cfg.ids.empty()) {
    problems = set.in_suite(suite_name);
  } else {
    for (const std::string& id : cfg.ids) {
      const BenchProblem& p = find_or_list(set, id);
      if (p.suite != suite_name)
        throw Error(Error::Code::config,
                    "benchmark " + id + " is not in " + suite_name);
      problems.push_back(&p);
    }
  }
  if (problems.empty())
    throw Error(Error::Code::config, "no benchmarks selected");

  RunConfig run_cfg = cfg;
  run_cfg.suite = suite_name;
  Grammar g = load_gvae_grammar(set, suite_name);
  GvaeModel m;
  if (!cfg.oracle) m = load_model(run_cfg, g);

  std::ostringstream csv;
  csv << "id,run,l2_u,l2_du,l2_ddu,rel_complexity,equation\n";
  double sum_u = 0.0, sum_du = 0.0, sum_ddu = 0.0, sum_rc = 0.0;
  int rows = 0, rows_ddu = 0;

  for (const BenchProblem* p : problems) {
    Trajectory truth = ground_truth(*p);
    const int true_complexity = complexity(p->combined_residual());
    for (int run = 1; run <= cfg.runs; ++run) {
      const std::uint64_t rs = mix_seed(cfg.seed, fnv1a(p->id), run);
      RunConfig rc = run_cfg;
      rc.seed = rs;
      rc.search.seed = rs;
      Trajectory data = smoothed_observations(rc, truth, rs, log);

      std::string equation;
      int cand_complexity = 0;
      if (cfg.oracle) {
        equation = render(p->combined_residual());
        cand_complexity = true_complexity;
      } else {
        DiscoveryResult r = discover(m, g, data, p->force(), rc.search);
        if (!r.all_penalized) {
          equation = r.candidates.front().eval.equation;
          cand_complexity = r.candidates.front().eval.complexity;
        }
      }

      SolveScore score;
      if (!equation.empty()) {
        int order = p->order();
        try {
          order = CompiledResidual(interpret(equation)).order();
        } catch (const Error&) {
        }
        const ForceFn force = cfg.oracle ? ForceFn() : p->force();
        score = solve_and_score(equation, force, truth,
                                initial_values(data, order),
                                cfg.search.solver_rtol, cfg.search.solver_atol);
      }

      const double u = std::min(score.l2_u, 1.0);
      const double du = std::min(score.l2_du, 1.0);
      const double rcx = true_complexity > 0
                             ? static_cast<double>(cand_complexity) /
                                   true_complexity
                             : 0.0;
      csv << p->id << ',' << run << ',' << format_double(u, 6) << ','
          << format_double(du, 6) << ',';
      sum_u += u;
      sum_du += du;
      if (suite >= 2 && p->order() >= 2) {
        const double ddu = std::min(score.l2_ddu, 1.0);
        csv << format_double(ddu, 6);
        sum_ddu += ddu;
        ++rows_ddu;
      }
      csv << ',' << format_double(rcx, 6) << ',' << equation << "\n";
      sum_rc += rcx;
      ++rows;
      log << p->id << " run " << run << ": l2_u "
          << format_double(u, 4) << (equation.empty() ? " (no candidate)" : "")
          << "\n";
    }
  }

  csv << "mean,," << format_double(sum_u / rows, 6) << ','
      << format_double(sum_du / rows, 6) << ',';
  if (rows_ddu > 0) csv << format_double(sum_ddu / rows_ddu, 6);
  csv << ',' << format_double(sum_rc / rows, 6) << ",\n";

  write_text_file(cfg.out + "/scoreboard.csv", csv.str());
  log << "scoreboard mean l2_u " << format_double(sum_u / rows, 6) << " over "
      << rows << " runs\n";
  return csv.str();
}

EvalReport cmd_eval(const RunConfig& cfg, const std::string& result_path,
                    const std::string& id, std::ostream& log) {
  ensure_out(cfg);
  BenchSet set = load_bench_set(cfg.data);
  const BenchProblem& p = find_or_list(set, id);
  Trajectory truth = ground_truth(p);

  json r;
  try {
    r = json::parse(read_text_file(result_path));
  } catch (const json::exception& e) {
    throw Error(Error::Code::data,
                std::string("result file is not valid JSON: ") + e.what());
  }
  if (!r.contains("candidates") || r["candidates"].empty())
    throw Error(Error::Code::data, "result has no candidates to evaluate");

  EvalReport rep;
  rep.equation = r["candidates"][0].value("equation", "");
  std::vector<double> y0 = p.initial_state;
  SolveScore score =
      solve_and_score(rep.equation, p.force(), truth, y0,
                      cfg.search.solver_rtol, cfg.search.solver_atol);
  rep.solved = score.solved;
  rep.l2_u = score.l2_u;
  rep.l2_du = score.l2_du;
  rep.l2_ddu = score.l2_ddu;

  json out;
  put_provenance(out, cfg);
  out["id"] = id;
  out["equation"] = rep.equation;
  out["solved"] = rep.solved;
  out["l2_u"] = rep.l2_u;
  out["l2_du"] = rep.l2_du;
  if (p.order() >= 2) out["l2_ddu"] = rep.l2_ddu;
  write_text_file(cfg.out + "/eval.json", out.dump(2) + "\n");

  log << id << ": " << rep.equation << " = 0 -> l2_u "
      << format_double(rep.l2_u, 6) << (rep.solved ? "" : " (solve failed)")
      << "\n";
  return rep;
}

}  // namespace odisc::cli
