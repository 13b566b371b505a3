#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <odisc/bench_data.hpp>
#include <odisc/gvae.hpp>
#include <odisc/search.hpp>
#include <odisc/smoother.hpp>

namespace odisc::cli {

// Full run configuration. Every field has a default; a config file
// overrides fields by section and unknown keys are rejected.
struct RunConfig {
  std::string data = "data/benchmarks.json";
  std::string out = "out";
  std::uint64_t seed = 0;
  int threads = 1;

  std::string suite = "bench1";
  std::string grammar_role = "gvae";  // "gvae" or "generator"

  int dataset_size = 2000;
  bool dedup = true;
  double val_fraction = 0.1;
  std::string dataset_dir;  // where cmd_train reads from; default = out

  GvaeConfig model;
  TrainConfig train;
  std::string checkpoint;  // model file for discover/bench; default out/checkpoint.bin

  SmootherConfig smoother;
  bool smooth = true;     // false feeds observations straight to the search
  int order = 1;          // derivative channels exposed to candidates
  double noise = 0.0;     // observation noise level
  SearchConfig search;

  std::vector<std::string> ids;  // benchmark subset; empty = whole suite
  int runs = 5;
  bool oracle = false;  // score the true ODE instead of searching
  int top_k = 5;
};

// Parses a JSON config file section by section. Missing file with an
// empty path gives the defaults. Unknown keys, wrong types and
// out-of-range values throw config errors.
RunConfig load_run_config(const std::string& path);
RunConfig run_config_from_json(const std::string& text);

// Canonical serialization of every field; its hash is embedded in all
// outputs so results can be traced to the exact configuration.
std::string run_config_canonical(const RunConfig& cfg);
std::uint64_t run_config_hash(const RunConfig& cfg);

// Removes the parentheses the generator grammar wraps around the final
// force block so the text parses under the embedding grammar.
// "a + b - ( c )" -> "a + b - c" (depth-0 scan over space-separated
// tokens; returns the input unchanged when the pattern is absent).
std::string strip_force_parens(const std::string& text);

struct GenStats {
  int requested = 0;
  int sampled = 0;  // draws taken
  int dropped = 0;  // not representable under the embedding grammar
  int train_count = 0;
  int val_count = 0;
};

// Dataset generation: samples the suite's generator grammar, re-parses
// under the embedding grammar when the two differ, dedups when asked,
// splits and writes train.txt / val.txt / meta.json under cfg.out.
GenStats cmd_gen(const RunConfig& cfg, std::ostream& log);

struct TrainReport {
  int epochs_run = 0;
  int best_epoch = 0;  // continued numbering when resuming
  double best_monitored = 0.0;
  double recon_train = 0.0;
  double recon_val = 0.0;
  bool aborted_non_finite = false;
};

// Trains the model on the dataset in cfg.dataset_dir and writes
// checkpoint.bin, log.csv and report.json under cfg.out. resume=true
// continues from an existing checkpoint and epoch counter.
TrainReport cmd_train(const RunConfig& cfg, bool resume, std::ostream& log);

// Full pipeline on a benchmark id or a trajectory CSV path: noise,
// smoothing, latent search; writes result.json, search_log.csv and
// report.txt under cfg.out and returns the result.
DiscoveryResult cmd_discover(const RunConfig& cfg, const std::string& target,
                             std::ostream& log);

// Scoreboard over one benchmark suite: per-example relative L2 errors
// (floored at 1.0), relative complexity and mean rows; writes
// scoreboard.csv under cfg.out and returns its text.
std::string cmd_bench(const RunConfig& cfg, int suite, std::ostream& log);

struct EvalReport {
  std::string equation;
  double l2_u = 1.0;
  double l2_du = 1.0;
  double l2_ddu = 1.0;  // only when the problem is order two
  bool solved = false;
};

// Re-scores the top candidate of a stored result JSON against a
// benchmark's ground truth; writes eval.json under cfg.out.
EvalReport cmd_eval(const RunConfig& cfg, const std::string& result_path,
                    const std::string& id, std::ostream& log);

}  // namespace odisc::cli
