#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include <doctest.h>

#include <odisc/bench_data.hpp>
#include <odisc/common.hpp>
#include <odisc/expr.hpp>
#include <odisc/grammar.hpp>
#include <odisc/ode_solver.hpp>
#include <odisc/trajectory.hpp>

using namespace odisc;

namespace {

const BenchSet& bench_set() {
  static const BenchSet set =
      load_bench_set(std::string(ODISC_TEST_DATA_DIR) + "/benchmarks.json");
  return set;
}

double rms(const Eigen::VectorXd& v) {
  if (v.size() == 0) return 0.0;
  return std::sqrt(v.squaredNorm() / static_cast<double>(v.size()));
}

}  // namespace

TEST_SUITE_BEGIN("bench_data");

TEST_CASE("definitions load and are well formed") {
  const BenchSet& set = bench_set();
  CHECK(set.problems.size() == 43);
  CHECK(set.in_suite("bench1").size() == 30);
  CHECK(set.in_suite("bench2").size() == 10);
  CHECK(set.in_suite("bench3").size() == 3);

  std::set<std::string> ids;
  for (const auto& p : set.problems) ids.insert(p.id);
  CHECK(ids.size() == set.problems.size());

  CHECK(set.find("ID7").fs == 10.0);
  CHECK_THROWS_AS((void)set.find("ID99"), Error);

  for (const auto& p : set.problems) {
    INFO(p.id);
    OdeExpr res = p.residual();
    CHECK(res.n_constants == 0);
    CHECK(res.order >= 1);
    CHECK(res.order <= 2);
    CHECK(p.initial_state.size() == static_cast<size_t>(res.order));
    CHECK(p.t1 > p.t0);
    CHECK(p.fs > 0.0);
    if (p.suite == "bench1") {
      CHECK(res.order == 1);
      CHECK_FALSE(p.has_force());
      CHECK_FALSE(p.has_solution());
    }
    if (p.suite == "bench2") {
      CHECK(p.has_solution());
      CHECK_FALSE(p.solution_d1_text.empty());
      CHECK_FALSE(p.solution_d2_text.empty());
      CHECK_FALSE(p.has_force());
    }
    if (p.suite == "bench3") {
      CHECK(res.order == 2);
      CHECK(p.has_force());
      CHECK(p.force_period > 0.0);
      CHECK(p.force() != nullptr);
    }
  }

  CHECK(bench_set().find("NLODE3").t0 == doctest::Approx(2.718281828459045));
  CHECK(bench_set().find("Pendulum").force()(3.14159265358979 * 2.0) ==
        doctest::Approx(2.0 * std::sin(3.14159265358979)).epsilon(1e-9));
}

TEST_CASE("suite grammars have the documented shapes") {
  const BenchSet& set = bench_set();

  Grammar b1 = load_generator_grammar(set, "bench1");
  CHECK(b1.total_rules() == 28);
  CHECK(b1.n_max == 40);
  CHECK_FALSE(b1.probabilistic);
  CHECK(b1.rule_string(b1.padding_index) == "Nothing -> None");

  Grammar b2g = load_generator_grammar(set, "bench2");
  CHECK(b2g.total_rules() == 29);
  CHECK(b2g.n_max == 50);
  CHECK(b2g.probabilistic);

  Grammar b2v = load_gvae_grammar(set, "bench2");
  CHECK(b2v.total_rules() == 24);
  CHECK(b2v.n_max == 70);
  CHECK_FALSE(b2v.probabilistic);

  Grammar b3g = load_generator_grammar(set, "bench3");
  CHECK(b3g.total_rules() == 27);
  CHECK(b3g.n_max == 40);
  CHECK(b3g.probabilistic);

  Grammar b3v = load_gvae_grammar(set, "bench3");
  CHECK(b3v.total_rules() == 22);
  CHECK(b3v.n_max == 65);
  CHECK_FALSE(b3v.probabilistic);
}

TEST_CASE("generator samples interpret and round trip") {
  const BenchSet& set = bench_set();
  for (const std::string suite : {"bench1", "bench2", "bench3"}) {
    INFO(suite);
    Grammar g = load_generator_grammar(set, suite);
    auto rng = make_rng(20240901);
    for (int i = 0; i < 40; ++i) {
      RuleSequence seq = sample(g, rng);
      std::string text = generate(g, seq);
      OdeExpr e = interpret(text);
      CHECK(e.order <= 2);
      CHECK(e.n_constants >= 1);
      RuleSequence back = parse(g, text);
      CHECK(generate(g, back) == text);
    }
  }
}

TEST_CASE("embedding grammar samples interpret or overflow the order") {
  const BenchSet& set = bench_set();
  for (const std::string suite : {"bench2", "bench3"}) {
    INFO(suite);
    Grammar g = load_gvae_grammar(set, suite);
    auto rng = make_rng(77);
    int order_overflows = 0;
    for (int i = 0; i < 60; ++i) {
      std::string text = generate(g, sample(g, rng));
      try {
        OdeExpr e = interpret(text);
        CHECK(e.n_constants >= 1);
      } catch (const Error& err) {
        CHECK(err.code == Error::Code::arity);
        ++order_overflows;
      }
    }
    CHECK(order_overflows < 30);
  }
}

TEST_CASE("closed forms satisfy their equations") {
  for (const BenchProblem* p : bench_set().in_suite("bench2")) {
    INFO(p->id);
    OdeExpr res = p->residual();
    OdeExpr u = interpret(p->solution_text);
    OdeExpr d1 = interpret(p->solution_d1_text);
    OdeExpr d2 = interpret(p->solution_d2_text);
    const int n = 211;
    double max_r = 0.0;
    for (int i = 0; i < n; ++i) {
      double t = p->t0 + (p->t1 - p->t0) * i / (n - 1);
      double r = eval(res, t, eval(u, t, 0, 0, 0), eval(d1, t, 0, 0, 0),
                      eval(d2, t, 0, 0, 0));
      max_r = std::max(max_r, std::abs(r));
    }
    CHECK(max_r < 1e-8);
    CHECK(eval(u, p->t0, 0, 0, 0) ==
          doctest::Approx(p->initial_state[0]).epsilon(1e-9));
    if (res.order == 2)
      CHECK(eval(d1, p->t0, 0, 0, 0) ==
            doctest::Approx(p->initial_state[1]).epsilon(1e-9));
  }
}

TEST_CASE("ground truth grids have the documented shapes") {
  const BenchSet& set = bench_set();

  Trajectory lode1 = ground_truth(set.find("LODE1"));
  CHECK(lode1.size() == 46);
  CHECK(lode1.has_du());
  CHECK(lode1.has_ddu());
  CHECK(lode1.u[0] == doctest::Approx(20.1));

  Trajectory lode4 = ground_truth(set.find("LODE4"));
  CHECK(lode4.size() == 101);

  Trajectory pend = ground_truth(set.find("Pendulum"));
  CHECK(pend.size() == 601);
  CHECK(pend.has_du());
  CHECK(pend.has_ddu());
  CHECK(pend.u[0] == doctest::Approx(0.0));
  CHECK(pend.du[0] == doctest::Approx(3.0));

  Trajectory id1 = ground_truth(set.find("ID1"));
  CHECK(id1.size() == 120);
  CHECK(id1.has_du());
  CHECK_FALSE(id1.has_ddu());
}

TEST_CASE("integrated truths satisfy the residual") {
  const BenchSet& set = bench_set();
  for (const auto& p : set.problems) {
    if (p.has_solution()) continue;
    INFO(p.id);
    Trajectory traj = ground_truth(p);
    ResidualResult r = eval_residual(p.residual(), traj, p.force());
    CHECK(r.finite);
    double scale = 1.0 + rms(traj.u) + rms(traj.du) + rms(traj.ddu);
    CHECK(r.l_de < 2e-4 * scale);
  }
}

TEST_CASE("solver reproduces closed forms on unique-branch problems") {
  const BenchSet& set = bench_set();
  for (const std::string id : {"LODE1", "LODE2", "LODE3", "LODE4", "LODE5",
                               "NLODE1", "NLODE2", "NLODE3"}) {
    INFO(id);
    const BenchProblem& p = set.find(id);
    IvpSpec spec;
    spec.residual = p.residual();
    spec.grid = sample_grid(p.t0, p.t1, p.fs);
    spec.y0 = p.initial_state;
    spec.rtol = 1e-10;
    spec.atol = 1e-12;
    IvpOutcome out = solve_ivp(spec);
    REQUIRE(out.success);
    Trajectory truth = ground_truth(p);
    CHECK(relative_l2(out.traj.u, truth.u) < 1e-6);
    CHECK(relative_l2(out.traj.du, truth.du) < 1e-5);
  }
}

TEST_CASE("squared residual admits the other branch from a double root") {
  const BenchProblem& p = bench_set().find("NLODE4");
  IvpSpec spec;
  spec.residual = p.residual();
  spec.grid = sample_grid(p.t0, p.t1, p.fs);
  spec.y0 = p.initial_state;
  IvpOutcome out = solve_ivp(spec);
  REQUIRE(out.success);
  ResidualResult r = eval_residual(p.residual(), out.traj);
  CHECK(r.finite);
  CHECK(r.l_de < 1e-3 * (1.0 + rms(out.traj.u) + rms(out.traj.ddu)));
  CHECK(relative_l2(out.traj.u, ground_truth(p).u) > 0.1);
}

TEST_CASE("degenerate initial condition is reported as a failure") {
  const BenchProblem& p = bench_set().find("NLODE5");
  IvpSpec spec;
  spec.residual = p.residual();
  spec.grid = sample_grid(p.t0, p.t1, p.fs);
  spec.y0 = p.initial_state;
  IvpOutcome out = solve_ivp(spec);
  CHECK_FALSE(out.success);
  CHECK(out.t_fail == doctest::Approx(p.t0));
  CHECK(ground_truth(p).u[ground_truth(p).size() - 1] ==
        doctest::Approx(0.8 * 2.5 * 2.5 * 2.5));
}

TEST_CASE("no ground truth is flagged trivial") {
  for (const auto& p : bench_set().problems) {
    INFO(p.id);
    CHECK_FALSE(is_trivial(p.residual(), p.force()));
  }
}

TEST_SUITE_END();
