#include <cmath>
#include <functional>
#include <string>

#include <doctest.h>

#include <odisc/bench_data.hpp>
#include <odisc/common.hpp>
#include <odisc/smoother.hpp>
#include <odisc/trajectory.hpp>

using namespace odisc;

namespace {

constexpr int kH = SmootherNet::kHidden;
constexpr double kPi = 3.141592653589793;

using LossFn = std::function<double(const SmootherNet&, Eigen::VectorXd*)>;

double max_grad_error(SmootherNet& net, const LossFn& loss) {
  Eigen::VectorXd g;
  loss(net, &g);
  Eigen::VectorXd& th = net.params();
  double worst = 0.0;
  for (Eigen::Index i = 0; i < th.size(); ++i) {
    const double save = th[i];
    const double h = 1e-5 * std::max(1.0, std::abs(save));
    th[i] = save + h;
    const double up = loss(net, nullptr);
    th[i] = save - h;
    const double dn = loss(net, nullptr);
    th[i] = save;
    const double fd = (up - dn) / (2.0 * h);
    const double err =
        std::abs(fd - g[i]) / std::max(1e-8, std::max(std::abs(fd), std::abs(g[i])));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace

TEST_SUITE_BEGIN("smoother");

TEST_CASE("input derivatives match finite differences") {
  SmootherNet net(0.0, 3.0, 42);
  Eigen::VectorXd pts(5);
  pts << 0.31, 0.9, 1.5, 2.2, 2.69;
  const double h = 1e-4;
  auto trip = net.derivatives(pts);
  for (Eigen::Index i = 0; i < pts.size(); ++i) {
    Eigen::VectorXd stencil(3);
    stencil << pts[i] - h, pts[i], pts[i] + h;
    auto s = net.derivatives(stencil);
    const double fd1 = (s.u[2] - s.u[0]) / (2.0 * h);
    const double fd2 = (s.u[2] - 2.0 * s.u[1] + s.u[0]) / (h * h);
    CHECK(std::abs(fd1 - trip.du[i]) < 1e-5 * std::max(1.0, std::abs(fd1)));
    CHECK(std::abs(fd2 - trip.ddu[i]) < 1e-4 * std::max(1.0, std::abs(fd2)));
    const double fd1b = (s.du[2] - s.du[0]) / (2.0 * h);
    CHECK(std::abs(fd1b - trip.ddu[i]) < 1e-5 * std::max(1.0, std::abs(fd1b)));
  }
}

TEST_CASE("zeroed input weights give a constant net") {
  SmootherNet net(0.0, 1.0, 9);
  net.params().segment(0, kH).setZero();  // W1
  auto trip = net.derivatives(sample_grid(0.0, 1.0, 10.0));
  CHECK(trip.du.cwiseAbs().maxCoeff() == 0.0);
  CHECK(trip.ddu.cwiseAbs().maxCoeff() == 0.0);
  CHECK((trip.u.array() - trip.u[0]).abs().maxCoeff() == 0.0);
}

TEST_CASE("derivatives are linear in the output layer") {
  SmootherNet net(0.0, 2.0, 13);
  SmootherNet doubled = net;
  doubled.params().tail(kH + 1) *= 2.0;  // W3, b3
  Eigen::VectorXd pts = sample_grid(0.0, 2.0, 7.0);
  auto a = net.derivatives(pts);
  auto b = doubled.derivatives(pts);
  CHECK((b.u - 2.0 * a.u).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((b.du - 2.0 * a.du).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((b.ddu - 2.0 * a.ddu).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("displacement loss gradient matches finite differences") {
  SmootherNet net(0.0, 1.0, 100);
  Eigen::VectorXd t = sample_grid(0.0, 1.0, 8.0);
  Eigen::VectorXd u = (2.5 * t.array() * t.array() - 0.3).matrix();
  LossFn loss = [&](const SmootherNet& n, Eigen::VectorXd* g) {
    return displacement_loss(n, t, u, g);
  };
  CHECK(max_grad_error(net, loss) < 1e-4);
}

TEST_CASE("acceleration loss gradient matches finite differences") {
  SmootherNet net(0.0, 2.0, 101);
  Eigen::VectorXd t = sample_grid(0.0, 2.0, 6.0);
  Eigen::VectorXd ddu = (-(t.array().sin())).matrix();

  SUBCASE("with anti-drift and initial conditions") {
    LossFn loss = [&](const SmootherNet& n, Eigen::VectorXd* g) {
      return acceleration_loss(n, t, ddu, 1e-3, 6, 0.0, 1.0, g);
    };
    CHECK(max_grad_error(net, loss) < 1e-4);
  }
  SUBCASE("zero beta reduces to prediction plus initial conditions") {
    AccelLossParts parts;
    const double total =
        acceleration_loss(net, t, ddu, 0.0, 0, 0.3, -0.4, nullptr, &parts);
    CHECK(parts.drift == 0.0);
    CHECK(total == doctest::Approx(parts.prediction + parts.ic).epsilon(1e-15));
    LossFn loss = [&](const SmootherNet& n, Eigen::VectorXd* g) {
      return acceleration_loss(n, t, ddu, 0.0, 0, 0.3, -0.4, g);
    };
    CHECK(max_grad_error(net, loss) < 1e-4);
  }
}

TEST_CASE("detrending a pure line leaves no residual") {
  Eigen::VectorXd t = sample_grid(1.0, 4.0, 5.0);
  Eigen::VectorXd y = (0.7 * t.array() - 2.1).matrix();
  Eigen::VectorXd trend = fitted_trend(t, y, 1);
  CHECK((y - trend).cwiseAbs().maxCoeff() < 1e-12);
  Eigen::VectorXd flat = fitted_trend(t, y, 0);
  CHECK(flat[0] == doctest::Approx(y.mean()));
  CHECK((flat.array() - flat[0]).abs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(fitted_trend(t, y, 2), Error);
}

TEST_CASE("noiseless linear data is fitted to closed tolerance") {
  Trajectory obs;
  obs.t = sample_grid(0.0, 1.0, 20.0);
  obs.u = 2.0 * obs.t;
  SmootherConfig cfg;
  cfg.epochs = 4000;
  cfg.seed = 3;
  SmootherNet net = fit_on_displacement(obs, cfg);
  CHECK(displacement_loss(net, obs.t, obs.u) < 1e-6);
  auto trip = net.derivatives(obs.t);
  for (Eigen::Index i = 2; i + 2 < obs.t.size(); ++i)
    CHECK(std::abs(trip.du[i] - 2.0) < 1e-2);
}

TEST_CASE("constant data yields a flat derivative") {
  Trajectory obs;
  obs.t = sample_grid(0.0, 2.0, 7.0);
  obs.u = Eigen::VectorXd::Constant(obs.t.size(), 3.7);
  SmootherConfig cfg;
  cfg.epochs = 8000;
  cfg.seed = 21;
  SmootherNet net = fit_on_displacement(obs, cfg);
  auto trip = net.derivatives(obs.t);
  CHECK(trip.du.cwiseAbs().maxCoeff() < 0.03);
  CHECK((trip.u.array() - 3.7).abs().maxCoeff() < 3e-3);
}

TEST_CASE("smoothing beats the noise on benchmark data") {
  const BenchSet set =
      load_bench_set(std::string(ODISC_TEST_DATA_DIR) + "/benchmarks.json");
  int improved = 0;
  for (const std::string id : {"LODE1", "LODE3", "ID6", "ID11"}) {
    Trajectory clean = ground_truth(set.find(id));
    Trajectory noisy = add_noise(clean, 0.05, 17);
    SmootherConfig cfg;
    cfg.epochs = 10000;
    cfg.seed = 5;
    SmootherNet net = fit_on_displacement(noisy, cfg);
    auto trip = net.derivatives(clean.t);
    const double fit_err = relative_l2(trip.u, clean.u);
    const double raw_err = relative_l2(noisy.u, clean.u);
    INFO(id, " fit=", fit_err, " raw=", raw_err);
    CHECK(fit_err < 0.10);
    if (fit_err <= raw_err) ++improved;
  }
  CHECK(improved >= 3);
}

TEST_CASE("acceleration-only sinusoid is reconstructed") {
  Trajectory obs;
  obs.t = sample_grid(0.0, 14.0, 10.0);
  obs.ddu = (-(obs.t.array().sin())).matrix();
  SmootherConfig cfg;
  cfg.epochs = 20000;
  cfg.seed = 7;
  cfg.beta_ddu = 1e-3;
  cfg.force_period = kPi;
  cfg.have_ics = true;
  cfg.u0 = 0.0;
  cfg.du0 = 1.0;
  SmootherNet net = fit_on_acceleration(obs, cfg);
  auto trip = net.derivatives(obs.t);
  CHECK(relative_l2(trip.u, obs.t.array().sin().matrix()) < 0.05);
  CHECK(relative_l2(trip.ddu, obs.ddu) < 0.05);
}

TEST_CASE("acceleration fit validates its configuration") {
  Trajectory obs;
  obs.t = sample_grid(0.0, 2.0, 10.0);
  obs.ddu = Eigen::VectorXd::Zero(obs.t.size());
  SmootherConfig cfg;
  cfg.epochs = 1;
  CHECK_THROWS_AS(fit_on_acceleration(obs, cfg), Error);  // no ICs
  cfg.have_ics = true;
  cfg.beta_ddu = 1e-3;
  cfg.force_period = 1.5;  // more than half the span
  CHECK_THROWS_AS(fit_on_acceleration(obs, cfg), Error);
  cfg.force_period = 0.0;
  CHECK_THROWS_AS(fit_on_acceleration(obs, cfg), Error);
  Trajectory no_ddu;
  no_ddu.t = obs.t;
  CHECK_THROWS_AS(fit_on_acceleration(no_ddu, cfg), Error);
}

TEST_CASE("training is deterministic and checkpoints round trip") {
  Trajectory obs;
  obs.t = sample_grid(0.0, 1.0, 12.0);
  obs.u = obs.t.array().square().matrix();
  SmootherConfig cfg;
  cfg.epochs = 300;
  cfg.seed = 99;
  SmootherNet a = fit_on_displacement(obs, cfg);
  SmootherNet b = fit_on_displacement(obs, cfg);
  CHECK(a.params() == b.params());

  const std::string blob = a.serialize();
  SmootherNet c = SmootherNet::deserialize(blob);
  CHECK(c.params() == a.params());
  CHECK(c.t_lo() == a.t_lo());
  CHECK(c.t_hi() == a.t_hi());

  std::string bad = blob;
  bad[0] = 'X';
  CHECK_THROWS_AS(SmootherNet::deserialize(bad), Error);
  CHECK_THROWS_AS(SmootherNet::deserialize(blob.substr(0, 20)), Error);
}

TEST_CASE("smoothed trajectories export through the usual channels") {
  SmootherNet net(0.0, 1.0, 4);
  Trajectory s = net.smooth(sample_grid(0.0, 1.0, 10.0));
  CHECK(s.provenance == Trajectory::Provenance::smoothed);
  CHECK(s.has_du());
  CHECK(s.has_ddu());
  Trajectory back = trajectory_from_csv(trajectory_to_csv(s));
  CHECK(back.size() == s.size());
  CHECK((back.u - s.u).cwiseAbs().maxCoeff() == 0.0);
}

TEST_SUITE_END();
