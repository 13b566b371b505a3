#include <cmath>

#include <doctest.h>

#include <odisc/cmaes.hpp>
#include <odisc/common.hpp>
#include <odisc/nelder_mead.hpp>

using namespace odisc;

namespace {

double sphere(const Eigen::VectorXd& x) { return x.squaredNorm(); }

double rosenbrock(const Eigen::VectorXd& x) {
  double s = 0.0;
  for (int i = 0; i + 1 < x.size(); ++i)
    s += 100.0 * std::pow(x[i + 1] - x[i] * x[i], 2) +
         std::pow(1.0 - x[i], 2);
  return s;
}

}  // namespace

TEST_SUITE_BEGIN("optim");

TEST_CASE("cmaes solves the 10-d sphere") {
  CmaesConfig cfg;
  cfg.lambda = 20;
  cfg.max_generations = 100;
  cfg.seed = 1;
  cfg.x0 = Eigen::VectorXd::Constant(10, 0.5);
  CmaesResult r = cmaes_minimize(sphere, 10, cfg);
  CHECK(r.best_f < 1e-8);
  CHECK(r.evaluations == 2000);
  REQUIRE(r.history.size() == 100);
  for (size_t i = 0; i < r.history.size(); ++i) {
    CHECK(r.history[i].generation == static_cast<int>(i) + 1);
    CHECK(r.history[i].sigma > 0.0);
    CHECK(std::isfinite(r.history[i].best_f));
  }
}

TEST_CASE("cmaes solves 5-d rosenbrock") {
  CmaesConfig cfg;
  cfg.max_generations = 500;
  cfg.seed = 1;
  CmaesResult r = cmaes_minimize(rosenbrock, 5, cfg);
  CHECK(r.best_f < 1e-4);
  CHECK((r.best_x - Eigen::VectorXd::Ones(5)).norm() < 1e-2);
}

TEST_CASE("selection is rank based") {
  CmaesConfig cfg;
  cfg.lambda = 12;
  cfg.max_generations = 30;
  cfg.seed = 7;
  cfg.x0 = Eigen::VectorXd::Constant(4, 1.5);
  CmaesResult a = cmaes_minimize(sphere, 4, cfg);
  CmaesResult b = cmaes_minimize(
      [](const Eigen::VectorXd& x) { return 10.0 * sphere(x); }, 4, cfg);
  CHECK(a.best_x == b.best_x);
  CHECK(b.best_f == doctest::Approx(10.0 * a.best_f).epsilon(1e-12));
}

TEST_CASE("a constant objective does not break the state") {
  CmaesConfig cfg;
  cfg.lambda = 8;
  cfg.max_generations = 20;
  cfg.seed = 9;
  CmaesResult r = cmaes_minimize(
      [](const Eigen::VectorXd&) { return 7.5; }, 3, cfg);
  CHECK(r.best_f == 7.5);
  CHECK(r.best_x.allFinite());
  CHECK(r.history.size() == 20);
  for (const CmaesGenStat& s : r.history) CHECK(std::isfinite(s.sigma));
}

TEST_CASE("cmaes is deterministic per seed") {
  CmaesConfig cfg;
  cfg.lambda = 10;
  cfg.max_generations = 25;
  cfg.seed = 4;
  cfg.x0 = Eigen::VectorXd::Constant(6, 2.0);
  CmaesResult a = cmaes_minimize(sphere, 6, cfg);
  CmaesResult b = cmaes_minimize(sphere, 6, cfg);
  CHECK(a.best_x == b.best_x);
  CHECK(a.best_f == b.best_f);
  cfg.seed = 5;
  CmaesResult c = cmaes_minimize(sphere, 6, cfg);
  CHECK(a.best_x != c.best_x);
}

TEST_CASE("cmaes stops early at the target") {
  CmaesConfig cfg;
  cfg.lambda = 20;
  cfg.max_generations = 100;
  cfg.seed = 1;
  cfg.stop_f = 1e-3;
  cfg.x0 = Eigen::VectorXd::Constant(10, 0.5);
  CmaesResult r = cmaes_minimize(sphere, 10, cfg);
  CHECK(r.best_f <= 1e-3);
  CHECK(r.history.size() < 100);
}

TEST_CASE("cmaes rejects bad configs") {
  CmaesConfig cfg;
  CHECK_THROWS_AS(cmaes_minimize(sphere, 0, cfg), Error);
  cfg.sigma0 = 0.0;
  CHECK_THROWS_AS(cmaes_minimize(sphere, 3, cfg), Error);
  cfg.sigma0 = 0.5;
  cfg.lambda = 1;
  CHECK_THROWS_AS(cmaes_minimize(sphere, 3, cfg), Error);
  cfg.lambda = 0;
  cfg.x0 = Eigen::VectorXd::Zero(2);
  CHECK_THROWS_AS(cmaes_minimize(sphere, 3, cfg), Error);
}

TEST_CASE("nelder mead finds a 1-d quadratic minimum") {
  NelderMeadResult r = nelder_mead(
      [](const Eigen::VectorXd& x) { return (x[0] - 3.0) * (x[0] - 3.0); },
      Eigen::VectorXd::Zero(1), {});
  CHECK(std::abs(r.best_x[0] - 3.0) < 1e-6);
  CHECK(r.best_f < 1e-12);
}

TEST_CASE("zero dimensions return immediately") {
  int calls = 0;
  NelderMeadResult r = nelder_mead(
      [&](const Eigen::VectorXd&) {
        ++calls;
        return 4.25;
      },
      Eigen::VectorXd(0), {});
  CHECK(r.best_f == 4.25);
  CHECK(r.best_x.size() == 0);
  CHECK(r.evaluations == 1);
  CHECK(calls == 1);
}

TEST_CASE("a 3-d bowl converges within 200 evaluations") {
  NelderMeadConfig cfg;
  cfg.max_evals = 200;
  NelderMeadResult r = nelder_mead(
      [](const Eigen::VectorXd& x) {
        return std::pow(x[0] - 1.0, 2) + 2.0 * std::pow(x[1] + 2.0, 2) +
               0.5 * x[2] * x[2];
      },
      Eigen::VectorXd::Ones(3), cfg);
  CHECK(r.evaluations <= 200);
  CHECK(r.best_f < 1e-8);
  CHECK(std::abs(r.best_x[0] - 1.0) < 1e-3);
  CHECK(std::abs(r.best_x[1] + 2.0) < 1e-3);
  CHECK(std::abs(r.best_x[2]) < 1e-3);
}

TEST_CASE("nelder mead handles 2-d rosenbrock") {
  Eigen::VectorXd x0(2);
  x0 << -1.2, 1.0;
  NelderMeadResult r = nelder_mead(rosenbrock, x0, {});
  CHECK(r.best_f < 1e-6);
  CHECK(r.evaluations <= 400);
}

TEST_CASE("the evaluation budget is a hard cap") {
  NelderMeadConfig cfg;
  cfg.max_evals = 25;
  int calls = 0;
  nelder_mead(
      [&](const Eigen::VectorXd& x) {
        ++calls;
        return x.squaredNorm();
      },
      Eigen::VectorXd::Constant(5, 2.0), cfg);
  CHECK(calls <= 25);
}

TEST_SUITE_END();
