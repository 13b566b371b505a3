#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include <odisc/common.hpp>

#include "cli.hpp"

namespace {

using odisc::cli::RunConfig;

struct Overrides {
  std::string config;
  std::uint64_t seed = 0;
  int threads = 0;
  std::string out;
  int order = 0;
  double noise = -1.0;
  bool oracle = false;
};

void add_common(CLI::App* cmd, Overrides& ov) {
  cmd->add_option("--config", ov.config, "JSON configuration file");
  cmd->add_option("--seed", ov.seed, "master seed");
  cmd->add_option("--threads", ov.threads, "worker threads (recorded; the "
                                           "engine is single-threaded)");
  cmd->add_option("--out", ov.out, "output directory");
}

bool given(const CLI::App* cmd, const char* name) {
  const CLI::Option* opt = cmd->get_option_no_throw(name);
  return opt && opt->count() > 0;
}

RunConfig make_config(const CLI::App* cmd, const Overrides& ov) {
  RunConfig cfg = odisc::cli::load_run_config(ov.config);
  if (given(cmd, "--seed")) {
    cfg.seed = ov.seed;
    cfg.train.seed = ov.seed;
    cfg.smoother.seed = ov.seed;
    cfg.search.seed = ov.seed;
  }
  if (given(cmd, "--threads")) cfg.threads = ov.threads;
  if (given(cmd, "--out")) {
    const bool dataset_follows = cfg.dataset_dir == cfg.out;
    const bool checkpoint_follows = cfg.checkpoint == cfg.out + "/checkpoint.bin";
    cfg.out = ov.out;
    if (dataset_follows) cfg.dataset_dir = ov.out;
    if (checkpoint_follows) cfg.checkpoint = ov.out + "/checkpoint.bin";
  }
  if (given(cmd, "--order")) cfg.order = ov.order;
  if (given(cmd, "--noise")) cfg.noise = ov.noise;
  if (given(cmd, "--oracle") && ov.oracle) cfg.oracle = true;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"grammar-guided discovery of ordinary differential equations"};
  app.require_subcommand(1);

  Overrides ov;
  bool resume = false;
  std::string target, result_path, bench_id;
  int suite = 0;

  CLI::App* gen = app.add_subcommand("gen", "sample a skeleton dataset");
  add_common(gen, ov);

  CLI::App* train = app.add_subcommand("train", "train the autoencoder");
  add_common(train, ov);
  train->add_flag("--resume", resume, "continue from the existing checkpoint");

  CLI::App* discover =
      app.add_subcommand("discover", "run the discovery pipeline");
  add_common(discover, ov);
  discover->add_option("target", target, "benchmark id or trajectory CSV")
      ->required();
  discover->add_option("--order", ov.order, "derivative channels exposed")
      ->check(CLI::Range(1, 2));
  discover->add_option("--noise", ov.noise, "observation noise level");

  CLI::App* bench = app.add_subcommand("bench", "score a benchmark suite");
  add_common(bench, ov);
  bench->add_option("suite", suite, "benchmark suite (1, 2 or 3)")->required();
  bench->add_option("--noise", ov.noise, "observation noise level");
  bench->add_flag("--oracle", ov.oracle, "score the true ODE, skip the search");

  CLI::App* eval = app.add_subcommand("eval", "re-score a stored result");
  add_common(eval, ov);
  eval->add_option("result", result_path, "result JSON path")->required();
  eval->add_option("id", bench_id, "benchmark id")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      odisc::cli::cmd_gen(make_config(gen, ov), std::cout);
    } else if (train->parsed()) {
      auto rep = odisc::cli::cmd_train(make_config(train, ov), resume,
                                       std::cout);
      if (rep.aborted_non_finite) return 3;
    } else if (discover->parsed()) {
      odisc::cli::cmd_discover(make_config(discover, ov), target, std::cout);
    } else if (bench->parsed()) {
      odisc::cli::cmd_bench(make_config(bench, ov), suite, std::cout);
    } else if (eval->parsed()) {
      odisc::cli::cmd_eval(make_config(eval, ov), result_path, bench_id,
                           std::cout);
    }
  } catch (const odisc::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code == odisc::Error::Code::config ? 2 : 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
