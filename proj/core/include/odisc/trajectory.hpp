#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "odisc/common.hpp"

namespace odisc {

// A sampled trajectory on a uniform grid. du/ddu may be empty when the
// corresponding channel is not available.
struct Trajectory {
  enum class Provenance { ground_truth, noisy, smoothed };

  Eigen::VectorXd t;
  Eigen::VectorXd u;
  Eigen::VectorXd du;
  Eigen::VectorXd ddu;
  Provenance provenance = Provenance::ground_truth;
  double fs = 0.0;

  Eigen::Index size() const { return t.size(); }
  bool has_du() const { return du.size() == t.size() && t.size() > 0; }
  bool has_ddu() const { return ddu.size() == t.size() && t.size() > 0; }
};

// Uniform grid with sampling frequency fs over [t0, t1], endpoints
// included: t_i = t0 + i/fs.
Eigen::VectorXd sample_grid(double t0, double t1, double fs);

// Additive Gaussian noise, sigma = level * rms(channel), one independent
// deterministic substream per channel.
Trajectory add_noise(const Trajectory& traj, double level, std::uint64_t seed);

// ||a - b||_2 / ||b||_2 with b the reference. Returns the raw ratio;
// flooring to 1 happens only at report aggregation.
double relative_l2(const Eigen::VectorXd& pred, const Eigen::VectorXd& truth);

std::string trajectory_to_csv(const Trajectory& traj);
Trajectory trajectory_from_csv(const std::string& csv);

}  // namespace odisc
