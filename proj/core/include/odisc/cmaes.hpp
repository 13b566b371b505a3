#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include <Eigen/Dense>

namespace odisc {

struct CmaesConfig {
  int lambda = 0;  // population size, 0 picks 4 + floor(3 ln d)
  double sigma0 = 0.5;
  Eigen::VectorXd x0;  // initial mean, zero vector when empty
  int max_generations = 100;
  double stop_f = -std::numeric_limits<double>::infinity();
  std::uint64_t seed = 0;
  // Invoked after each generation's state update (the single-threaded
  // synchronization point), before the next generation samples.
  std::function<void(int generation)> on_generation;
};

struct CmaesGenStat {
  int generation = 0;     // 1-based
  double best_f = 0.0;    // best raw objective value in the generation
  double sigma = 0.0;     // step size after the update
};

struct CmaesResult {
  Eigen::VectorXd best_x;
  double best_f = std::numeric_limits<double>::infinity();
  std::vector<CmaesGenStat> history;
  int evaluations = 0;
};

// Minimizes f over R^d with (mu/mu_w, lambda) CMA-ES: rank-based
// recombination, cumulative step-size adaptation and rank-one plus
// rank-mu covariance updates. The objective must return a finite
// value everywhere (use a large penalty for infeasible points).
// Deterministic per seed; individual k of generation g is drawn from
// an RNG stream keyed by (seed, g, k). Stops after max_generations
// or once the running best drops to stop_f or below.
CmaesResult cmaes_minimize(const std::function<double(const Eigen::VectorXd&)>& f,
                           int d, const CmaesConfig& cfg);

}  // namespace odisc
