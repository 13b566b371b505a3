#pragma once

#include <cstdint>
#include <string>

#include <Eigen/Core>

#include "odisc/trajectory.hpp"

namespace odisc {

struct SmootherConfig {
  int epochs = 10000;
  int batch = 32;
  double lr = 1e-3;
  int step_size = 500;  // epochs between learning-rate decays
  double gamma = 0.95;
  std::uint64_t seed = 0;
  // Acceleration-only fits.
  double beta_ddu = 0.0;      // anti-drift weight
  double force_period = 0.0;  // T; the drift window is t >= t[0] + T
  bool have_ics = false;
  double u0 = 0.0;
  double du0 = 0.0;
};

// Fixed 1-32-32-1 SiLU network over an affinely normalized input. The same
// pass propagates exact first and second derivatives with respect to t.
class SmootherNet {
 public:
  static constexpr int kHidden = 32;

  struct Triple {
    Eigen::VectorXd u, du, ddu;
  };

  SmootherNet() = default;
  SmootherNet(double t_lo, double t_hi, std::uint64_t seed);

  static int n_params() { return kHidden * kHidden + 4 * kHidden + 1; }
  // Flat layout: W1 (h), b1 (h), W2 (h*h column major), b2 (h), W3 (h), b3.
  Eigen::VectorXd& params() { return theta_; }
  const Eigen::VectorXd& params() const { return theta_; }
  double t_lo() const { return t_lo_; }
  double t_hi() const { return t_hi_; }

  Triple derivatives(const Eigen::VectorXd& t_grid) const;
  Trajectory smooth(const Eigen::VectorXd& t_grid) const;

  std::string serialize() const;
  static SmootherNet deserialize(const std::string& blob);

 private:
  double t_lo_ = -1.0;
  double t_hi_ = 1.0;
  Eigen::VectorXd theta_;
};

// Mean squared error of net(t) against u. Fills the parameter gradient
// (flat, same layout as params()) when grad is non-null.
double displacement_loss(const SmootherNet& net, const Eigen::VectorXd& t,
                         const Eigen::VectorXd& u,
                         Eigen::VectorXd* grad = nullptr);

struct AccelLossParts {
  double prediction = 0.0;
  double drift = 0.0;  // unweighted; the total applies beta
  double ic = 0.0;
};

// Prediction MSE on the second derivative, plus beta times the mean squared
// fitted trend of u (linear) and du (constant) over indices >= window_start,
// plus squared initial-condition mismatch at t[0].
double acceleration_loss(const SmootherNet& net, const Eigen::VectorXd& t,
                         const Eigen::VectorXd& ddu, double beta,
                         Eigen::Index window_start, double u0, double du0,
                         Eigen::VectorXd* grad = nullptr,
                         AccelLossParts* parts = nullptr);

// Least-squares trend of y over t (degree 0: constant, 1: line), evaluated
// on t. Subtracting it from y is what "detrending" means here.
Eigen::VectorXd fitted_trend(const Eigen::VectorXd& t, const Eigen::VectorXd& y,
                             int degree);

SmootherNet fit_on_displacement(const Trajectory& obs,
                                const SmootherConfig& cfg);
SmootherNet fit_on_acceleration(const Trajectory& obs,
                                const SmootherConfig& cfg);

}  // namespace odisc
