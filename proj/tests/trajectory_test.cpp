#include <cmath>

#include "doctest.h"
#include "odisc/trajectory.hpp"

using namespace odisc;

TEST_SUITE_BEGIN("trajectory");

TEST_CASE("sampling grids include both endpoints at 1/fs spacing") {
  Eigen::VectorXd g = sample_grid(0.1, 1.0, 50.0);
  REQUIRE(g.size() == 46);
  CHECK(g[0] == doctest::Approx(0.1));
  CHECK(g[45] == doctest::Approx(1.0));
  CHECK(g[1] - g[0] == doctest::Approx(0.02));

  CHECK(sample_grid(0.0, 60.0, 10.0).size() == 601);
  CHECK(sample_grid(0.0, 10.0, 100.0).size() == 1001);
  CHECK_THROWS_AS(sample_grid(1.0, 0.0, 10.0), Error);
  CHECK_THROWS_AS(sample_grid(0.0, 1.0, 0.0), Error);
}

TEST_CASE("noise is deterministic, scaled by channel RMS, per-channel") {
  Trajectory traj;
  traj.t = sample_grid(0.0, 10.0, 100.0);
  traj.u = (2.0 * traj.t).array().sin() * 3.0;
  traj.du = traj.u;  // identical channel exposes substream independence
  traj.fs = 100.0;

  Trajectory a = add_noise(traj, 0.05, 99);
  Trajectory b = add_noise(traj, 0.05, 99);
  Trajectory c = add_noise(traj, 0.05, 100);
  CHECK(a.u == b.u);
  CHECK(a.u != c.u);
  CHECK(a.provenance == Trajectory::Provenance::noisy);

  double rms_u = std::sqrt(traj.u.squaredNorm() / traj.u.size());
  Eigen::VectorXd noise = a.u - traj.u;
  double sigma = std::sqrt(noise.squaredNorm() / noise.size());
  CHECK(sigma == doctest::Approx(0.05 * rms_u).epsilon(0.10));

  // same values in, different substreams out
  CHECK((a.du - traj.du) != noise);
  CHECK(a.ddu.size() == 0);

  Trajectory clean = add_noise(traj, 0.0, 7);
  CHECK(clean.u == traj.u);
}

TEST_CASE("relative L2 is the error norm against the reference") {
  Eigen::VectorXd truth = Eigen::VectorXd::LinSpaced(10, 1.0, 2.0);
  CHECK(relative_l2(truth, truth) == doctest::Approx(0.0));
  CHECK(relative_l2(1.1 * truth, truth) == doctest::Approx(0.1));
  Eigen::VectorXd zero = Eigen::VectorXd::Zero(10);
  CHECK(relative_l2(zero, truth) == doctest::Approx(1.0));
  CHECK_THROWS_AS(relative_l2(truth, Eigen::VectorXd::Zero(3)), Error);
}

TEST_CASE("csv round trip is exact") {
  Trajectory traj;
  traj.t = sample_grid(0.0, 1.0, 25.0);
  traj.u = traj.t.array().sin();
  traj.du = traj.t.array().cos();
  traj.ddu = -traj.u;
  traj.fs = 25.0;

  Trajectory back = trajectory_from_csv(trajectory_to_csv(traj));
  CHECK(back.t == traj.t);
  CHECK(back.u == traj.u);
  CHECK(back.du == traj.du);
  CHECK(back.ddu == traj.ddu);
  CHECK(back.fs == doctest::Approx(25.0));

  Trajectory slim;
  slim.t = traj.t;
  slim.u = traj.u;
  Trajectory slim_back = trajectory_from_csv(trajectory_to_csv(slim));
  CHECK(slim_back.u == slim.u);
  CHECK_FALSE(slim_back.has_du());
  CHECK_FALSE(slim_back.has_ddu());
}

TEST_CASE("csv rejects malformed input") {
  CHECK_THROWS_AS(trajectory_from_csv(""), Error);
  CHECK_THROWS_AS(trajectory_from_csv("x,y\n1,2\n"), Error);
  CHECK_THROWS_AS(trajectory_from_csv("t,u\n1\n"), Error);
  CHECK_THROWS_AS(trajectory_from_csv("t,u\n1,abc\n"), Error);
  CHECK_THROWS_AS(trajectory_from_csv("t,u,weird\n1,2,3\n"), Error);
  CHECK_THROWS_AS(trajectory_from_csv("t,u,du,ddu,more\n1,2,3,4,5\n"), Error);
}

TEST_SUITE_END();
