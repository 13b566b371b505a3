#include "cli.hpp"

#include <nlohmann/json.hpp>

#include <odisc/common.hpp>

namespace odisc::cli {
namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& msg) {
  throw Error(Error::Code::config, msg);
}

// Pulls one typed value out of a section, erasing the key so leftovers
// can be rejected afterwards.
template <typename T>
void take(json& j, const char* key, T& out, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    bad(where + "." + key + " has the wrong type");
  }
  j.erase(it);
}

void take_array3(json& j, const char* key, std::array<int, 3>& out,
                 const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) return;
  if (!it->is_array() || it->size() != 3)
    bad(where + "." + key + " must be an array of three integers");
  for (int i = 0; i < 3; ++i) {
    if (!(*it)[i].is_number_integer())
      bad(where + "." + key + " must be an array of three integers");
    out[i] = (*it)[i].get<int>();
  }
  j.erase(it);
}

void reject_leftovers(const json& j, const std::string& where) {
  if (j.empty()) return;
  bad("unknown key \"" + j.begin().key() + "\" in " + where);
}

json take_section(json& root, const char* key) {
  auto it = root.find(key);
  if (it == root.end()) return json::object();
  if (!it->is_object()) bad(std::string(key) + " must be an object");
  json section = *it;
  root.erase(it);
  return section;
}

ClosureMode closure_from_string(const std::string& s) {
  if (s == "none") return ClosureMode::none;
  if (s == "append_neg_du") return ClosureMode::append_neg_du;
  if (s == "fix_first_constant") return ClosureMode::fix_first_constant;
  bad("search.closure must be none, append_neg_du or fix_first_constant");
}

const char* closure_to_string(ClosureMode m) {
  switch (m) {
    case ClosureMode::none: return "none";
    case ClosureMode::append_neg_du: return "append_neg_du";
    case ClosureMode::fix_first_constant: return "fix_first_constant";
  }
  return "none";
}

SelectionObjective selection_from_string(const std::string& s) {
  if (s == "residual") return SelectionObjective::residual;
  if (s == "information_criterion")
    return SelectionObjective::information_criterion;
  bad("search.selection must be residual or information_criterion");
}

const char* selection_to_string(SelectionObjective s) {
  return s == SelectionObjective::residual ? "residual"
                                           : "information_criterion";
}

void check(bool ok, const char* msg) {
  if (!ok) bad(msg);
}

void validate(const RunConfig& c) {
  check(c.threads >= 1, "threads must be at least 1");
  check(c.grammar_role == "gvae" || c.grammar_role == "generator",
        "grammar.role must be gvae or generator");
  check(c.dataset_size >= 0, "dataset.size must be non-negative");
  check(c.val_fraction >= 0.0 && c.val_fraction < 1.0,
        "dataset.val_fraction must be in [0, 1)");
  check(c.model.d_z >= 1 && c.model.hidden >= 1,
        "model dimensions must be positive");
  for (int v : c.model.conv_channels)
    check(v >= 1, "model.conv_channels must be positive");
  for (int v : c.model.conv_kernels)
    check(v >= 1, "model.conv_kernels must be positive");
  check(c.train.lr > 0.0, "train.lr must be positive");
  check(c.train.min_lr > 0.0 && c.train.min_lr <= c.train.lr,
        "train.min_lr must be in (0, lr]");
  check(c.train.plateau_factor > 0.0 && c.train.plateau_factor <= 1.0,
        "train.plateau_factor must be in (0, 1]");
  check(c.train.plateau_patience >= 1, "train.plateau_patience must be >= 1");
  check(c.train.early_stop >= 1, "train.early_stop must be >= 1");
  check(c.train.max_epochs >= 1, "train.max_epochs must be >= 1");
  check(c.train.batch >= 1, "train.batch must be >= 1");
  check(c.train.beta_kl >= 0.0, "train.beta_kl must be non-negative");
  check(c.smoother.epochs >= 1, "smoother.epochs must be >= 1");
  check(c.smoother.batch >= 1, "smoother.batch must be >= 1");
  check(c.smoother.lr > 0.0, "smoother.lr must be positive");
  check(c.smoother.step_size >= 1, "smoother.step_size must be >= 1");
  check(c.smoother.gamma > 0.0 && c.smoother.gamma <= 1.0,
        "smoother.gamma must be in (0, 1]");
  check(c.order == 1 || c.order == 2, "pipeline.order must be 1 or 2");
  check(c.noise >= 0.0, "pipeline.noise must be non-negative");
  check(c.runs >= 1, "bench.runs must be >= 1");
  check(c.top_k >= 1, "bench.top_k must be >= 1");
}

}  // namespace

RunConfig run_config_from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    bad(std::string("config is not valid JSON: ") + e.what());
  }
  if (!root.is_object()) bad("config root must be an object");

  RunConfig c;
  take(root, "data", c.data, "config");
  take(root, "out", c.out, "config");
  take(root, "seed", c.seed, "config");
  take(root, "threads", c.threads, "config");
  take(root, "checkpoint", c.checkpoint, "config");

  json g = take_section(root, "grammar");
  take(g, "suite", c.suite, "grammar");
  take(g, "role", c.grammar_role, "grammar");
  reject_leftovers(g, "grammar");

  json d = take_section(root, "dataset");
  take(d, "size", c.dataset_size, "dataset");
  take(d, "dedup", c.dedup, "dataset");
  take(d, "val_fraction", c.val_fraction, "dataset");
  take(d, "dir", c.dataset_dir, "dataset");
  reject_leftovers(d, "dataset");

  json m = take_section(root, "model");
  take(m, "d_z", c.model.d_z, "model");
  take(m, "hidden", c.model.hidden, "model");
  take_array3(m, "conv_channels", c.model.conv_channels, "model");
  take_array3(m, "conv_kernels", c.model.conv_kernels, "model");
  reject_leftovers(m, "model");

  json t = take_section(root, "train");
  take(t, "beta_kl", c.train.beta_kl, "train");
  take(t, "lr", c.train.lr, "train");
  take(t, "plateau_factor", c.train.plateau_factor, "train");
  take(t, "plateau_patience", c.train.plateau_patience, "train");
  take(t, "min_lr", c.train.min_lr, "train");
  take(t, "early_stop", c.train.early_stop, "train");
  take(t, "max_epochs", c.train.max_epochs, "train");
  take(t, "batch", c.train.batch, "train");
  reject_leftovers(t, "train");

  json s = take_section(root, "smoother");
  take(s, "epochs", c.smoother.epochs, "smoother");
  take(s, "batch", c.smoother.batch, "smoother");
  take(s, "lr", c.smoother.lr, "smoother");
  take(s, "step_size", c.smoother.step_size, "smoother");
  take(s, "gamma", c.smoother.gamma, "smoother");
  take(s, "beta_ddu", c.smoother.beta_ddu, "smoother");
  take(s, "force_period", c.smoother.force_period, "smoother");
  reject_leftovers(s, "smoother");

  json p = take_section(root, "pipeline");
  take(p, "smooth", c.smooth, "pipeline");
  take(p, "order", c.order, "pipeline");
  take(p, "noise", c.noise, "pipeline");
  reject_leftovers(p, "pipeline");

  json q = take_section(root, "search");
  take(q, "population", c.search.population, "search");
  take(q, "generations", c.search.generations, "search");
  take(q, "sigma0", c.search.sigma0, "search");
  take(q, "theta_de", c.search.theta_de, "search");
  take(q, "theta_k", c.search.theta_k, "search");
  take(q, "theta_buffer", c.search.theta_buffer, "search");
  take(q, "alpha", c.search.alpha, "search");
  if (q.contains("closure")) {
    std::string v;
    take(q, "closure", v, "search");
    c.search.closure = closure_from_string(v);
  }
  if (q.contains("selection")) {
    std::string v;
    take(q, "selection", v, "search");
    c.search.selection = selection_from_string(v);
  }
  take(q, "solve_ode", c.search.solve_ode, "search");
  take(q, "multistart", c.search.multistart, "search");
  take(q, "solver_rtol", c.search.solver_rtol, "search");
  take(q, "solver_atol", c.search.solver_atol, "search");
  take(q, "nm_max_evals", c.search.inner.max_evals, "search");
  take(q, "nm_x_tol", c.search.inner.x_tol, "search");
  take(q, "nm_f_tol", c.search.inner.f_tol, "search");
  take(q, "trivial_eps", c.search.trivial.eps, "search");
  reject_leftovers(q, "search");

  json b = take_section(root, "bench");
  take(b, "ids", c.ids, "bench");
  take(b, "runs", c.runs, "bench");
  take(b, "oracle", c.oracle, "bench");
  take(b, "top_k", c.top_k, "bench");
  reject_leftovers(b, "bench");

  reject_leftovers(root, "config");

  c.train.seed = c.seed;
  c.smoother.seed = c.seed;
  c.search.seed = c.seed;
  if (c.dataset_dir.empty()) c.dataset_dir = c.out;
  if (c.checkpoint.empty()) c.checkpoint = c.out + "/checkpoint.bin";
  validate(c);
  return c;
}

RunConfig load_run_config(const std::string& path) {
  if (path.empty()) {
    RunConfig c;
    c.dataset_dir = c.out;
    c.checkpoint = c.out + "/checkpoint.bin";
    return c;
  }
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const Error& e) {
    bad(std::string("config: ") + e.what());
  }
  return run_config_from_json(text);
}

std::string run_config_canonical(const RunConfig& c) {
  json j;
  j["data"] = c.data;
  j["out"] = c.out;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["checkpoint"] = c.checkpoint;
  j["grammar"] = {{"suite", c.suite}, {"role", c.grammar_role}};
  j["dataset"] = {{"size", c.dataset_size},
                  {"dedup", c.dedup},
                  {"val_fraction", c.val_fraction},
                  {"dir", c.dataset_dir}};
  j["model"] = {{"d_z", c.model.d_z},
                {"hidden", c.model.hidden},
                {"conv_channels", c.model.conv_channels},
                {"conv_kernels", c.model.conv_kernels}};
  j["train"] = {{"beta_kl", c.train.beta_kl},
                {"lr", c.train.lr},
                {"plateau_factor", c.train.plateau_factor},
                {"plateau_patience", c.train.plateau_patience},
                {"min_lr", c.train.min_lr},
                {"early_stop", c.train.early_stop},
                {"max_epochs", c.train.max_epochs},
                {"batch", c.train.batch}};
  j["smoother"] = {{"epochs", c.smoother.epochs},
                   {"batch", c.smoother.batch},
                   {"lr", c.smoother.lr},
                   {"step_size", c.smoother.step_size},
                   {"gamma", c.smoother.gamma},
                   {"beta_ddu", c.smoother.beta_ddu},
                   {"force_period", c.smoother.force_period}};
  j["pipeline"] = {{"smooth", c.smooth}, {"order", c.order}, {"noise", c.noise}};
  j["search"] = {{"population", c.search.population},
                 {"generations", c.search.generations},
                 {"sigma0", c.search.sigma0},
                 {"theta_de", c.search.theta_de},
                 {"theta_k", c.search.theta_k},
                 {"theta_buffer", c.search.theta_buffer},
                 {"alpha", c.search.alpha},
                 {"closure", closure_to_string(c.search.closure)},
                 {"selection", selection_to_string(c.search.selection)},
                 {"solve_ode", c.search.solve_ode},
                 {"multistart", c.search.multistart},
                 {"solver_rtol", c.search.solver_rtol},
                 {"solver_atol", c.search.solver_atol},
                 {"nm_max_evals", c.search.inner.max_evals},
                 {"nm_x_tol", c.search.inner.x_tol},
                 {"nm_f_tol", c.search.inner.f_tol},
                 {"trivial_eps", c.search.trivial.eps}};
  j["bench"] = {{"ids", c.ids},
                {"runs", c.runs},
                {"oracle", c.oracle},
                {"top_k", c.top_k}};
  return j.dump();
}

std::uint64_t run_config_hash(const RunConfig& cfg) {
  return fnv1a(run_config_canonical(cfg));
}

}  // namespace odisc::cli
