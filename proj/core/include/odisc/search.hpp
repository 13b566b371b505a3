#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "odisc/cmaes.hpp"
#include "odisc/expr.hpp"
#include "odisc/grammar.hpp"
#include "odisc/gvae.hpp"
#include "odisc/nelder_mead.hpp"
#include "odisc/smoother.hpp"
#include "odisc/trajectory.hpp"

namespace odisc {

// Candidates scored at or above these values were rejected rather than
// measured: kPenaltyHard marks trivial, malformed or degenerate
// equations, kPenaltyGated (plus the residual loss) marks candidates
// that failed the threshold gate or whose ODE solve failed.
inline constexpr double kPenaltyHard = 1e9;
inline constexpr double kPenaltyGated = 1e6;

// Structural rewrite applied to every decoded expression before
// evaluation.
enum class ClosureMode {
  none,
  append_neg_du,       // candidate f becomes f - du (explicit first order)
  fix_first_constant,  // first placeholder pinned to 1 during fitting
};

// Loss the CMA-ES ranking minimizes.
enum class SelectionObjective {
  residual,               // L_DE only, no ODE solving
  information_criterion,  // alpha-weighted complexity/accuracy tradeoff
};

struct SearchConfig {
  int population = 100;
  int generations = 10;
  double sigma0 = 0.5;
  double theta_de = 200.0;   // initial residual gate
  int theta_k = 20;          // losses averaged by the adaptive gate
  double theta_buffer = 0.05;
  double alpha = 0.1;        // complexity weight inside the criterion
  ClosureMode closure = ClosureMode::none;
  SelectionObjective selection = SelectionObjective::residual;
  bool solve_ode = false;    // evaluate L_SOL for gate-passing candidates
  bool multistart = true;    // one retry from uniform constants on a poor fit
  TrivialFilterConfig trivial;
  NelderMeadConfig inner;
  double solver_rtol = 1e-6;
  double solver_atol = 1e-8;
  std::uint64_t seed = 0;
};

struct CandidateEval {
  std::string skeleton;           // decoded text before closure
  std::string equation;           // closed form with bound constants
  std::vector<double> constants;  // bound values, fixed first included
  double l_de = kPenaltyHard;
  std::optional<double> l_sol;
  double l_ic = kPenaltyHard;
  double selection = kPenaltyHard;  // loss seen by the outer search
  int complexity = 0;
  bool trivial = false;
  bool degenerate = false;   // malformed, order zero, or zero leading scale
  bool gate_passed = false;  // l_de below the gate when solving was on
  bool solve_failed = false;
};

struct RankedCandidate {
  CandidateEval eval;
  Eigen::VectorXd z;    // first latent point that decoded to this skeleton
  int generation = 0;   // generation of that first decode
};

struct GenerationLog {
  int generation = 0;
  double best_l_de = 0.0;
  double theta_de = 0.0;
  double best_selection = 0.0;
};

struct DiscoveryResult {
  std::vector<RankedCandidate> candidates;  // ascending selection loss
  std::vector<GenerationLog> log;
  bool all_penalized = false;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  int evaluations = 0;     // objective calls, cache hits included
  int unique_skeletons = 0;
  double wall_seconds = 0.0;
};

// New gate threshold: mean of the k smallest gate-eligible losses of a
// generation plus the buffer margin. Losses at or above kPenaltyGated
// and non-finite values are ignored; fewer than k usable losses leave
// the threshold unchanged.
double adapt_threshold(const std::vector<double>& losses, double current,
                       int k = 20, double buffer = 0.05);

// Scores one decoded candidate against a trajectory whose channels are
// treated as the smoothed observations: closure, trivial filtering,
// Nelder-Mead constant fitting on the normalized residual RMS and, when
// enabled and gate-passing, an ODE solve from the trajectory's initial
// values scored by the standardized solution error.
CandidateEval evaluate_candidate(const std::string& skeleton_text,
                                 const Trajectory& data, const ForceFn& force,
                                 const SearchConfig& cfg,
                                 double theta_de_now);

// Latent-space discovery: decodes CMA-ES samples through the model,
// evaluates each distinct skeleton once (cached), adapts the gate each
// generation and returns candidates ranked by the selection objective.
DiscoveryResult discover(const GvaeModel& m, const Grammar& g,
                         const Trajectory& smoothed, const ForceFn& force,
                         const SearchConfig& cfg);

// JSON rendering with sorted keys; wall_seconds is omitted by default
// so identical runs serialize identically.
std::string discovery_result_to_json(const DiscoveryResult& r,
                                     bool include_wall_time = false);

// CSV of the per-generation log: generation, best L_DE, theta, best
// selection loss.
std::string discovery_log_csv(const DiscoveryResult& r);

}  // namespace odisc
