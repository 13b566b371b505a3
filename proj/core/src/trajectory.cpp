#include "odisc/trajectory.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

namespace odisc {

Eigen::VectorXd sample_grid(double t0, double t1, double fs) {
  if (fs <= 0.0 || t1 <= t0)
    throw Error(Error::Code::config, "bad sampling grid");
  auto n = static_cast<Eigen::Index>(std::floor((t1 - t0) * fs + 1e-9)) + 1;
  Eigen::VectorXd t(n);
  for (Eigen::Index i = 0; i < n; ++i)
    t[i] = t0 + static_cast<double>(i) / fs;
  return t;
}

namespace {

double rms(const Eigen::VectorXd& v) {
  if (v.size() == 0) return 0.0;
  return std::sqrt(v.squaredNorm() / static_cast<double>(v.size()));
}

Eigen::VectorXd noisy_channel(const Eigen::VectorXd& v, double level,
                              std::uint64_t seed, std::uint64_t salt) {
  if (v.size() == 0 || level == 0.0) return v;
  double sigma = level * rms(v);
  auto rng = make_rng(mix_seed(seed, salt));
  std::normal_distribution<double> dist(0.0, sigma);
  Eigen::VectorXd out = v;
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] += dist(rng);
  return out;
}

}  // namespace

Trajectory add_noise(const Trajectory& traj, double level, std::uint64_t seed) {
  Trajectory out = traj;
  out.u = noisy_channel(traj.u, level, seed, 1);
  out.du = noisy_channel(traj.du, level, seed, 2);
  out.ddu = noisy_channel(traj.ddu, level, seed, 3);
  out.provenance = Trajectory::Provenance::noisy;
  return out;
}

double relative_l2(const Eigen::VectorXd& pred, const Eigen::VectorXd& truth) {
  if (pred.size() != truth.size() || truth.size() == 0)
    throw Error(Error::Code::data, "relative_l2 size mismatch");
  double denom = truth.norm();
  if (denom == 0.0) return pred.norm() == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return (pred - truth).norm() / denom;
}

std::string trajectory_to_csv(const Trajectory& traj) {
  std::ostringstream os;
  os << "t,u";
  bool has_du = traj.has_du();
  bool has_ddu = traj.has_ddu();
  if (has_du) os << ",du";
  if (has_ddu) os << ",ddu";
  os << "\n";
  for (Eigen::Index i = 0; i < traj.size(); ++i) {
    os << format_double(traj.t[i]) << "," << format_double(traj.u[i]);
    if (has_du) os << "," << format_double(traj.du[i]);
    if (has_ddu) os << "," << format_double(traj.ddu[i]);
    os << "\n";
  }
  return os.str();
}

Trajectory trajectory_from_csv(const std::string& csv) {
  std::istringstream is(csv);
  std::string line;
  if (!std::getline(is, line))
    throw Error(Error::Code::data, "empty trajectory csv");
  while (!line.empty() && (line.back() == '\r' || line.back() == '\n'))
    line.pop_back();

  std::vector<std::string> cols;
  {
    std::istringstream hs(line);
    std::string c;
    while (std::getline(hs, c, ',')) cols.push_back(c);
  }
  if (cols.size() < 2 || cols[0] != "t" || cols[1] != "u")
    throw Error(Error::Code::data, "trajectory csv must start with t,u columns");
  bool has_du = cols.size() > 2 && cols[2] == "du";
  bool has_ddu = cols.size() > 3 && cols[3] == "ddu";
  if (cols.size() > 2 && !has_du)
    throw Error(Error::Code::data, "unknown trajectory csv column: " + cols[2]);
  if (cols.size() > 3 && !has_ddu)
    throw Error(Error::Code::data, "unknown trajectory csv column: " + cols[3]);
  if (cols.size() > 4)
    throw Error(Error::Code::data, "too many trajectory csv columns");

  std::vector<double> t, u, du, ddu;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n'))
      line.pop_back();
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(ls, cell, ',')) {
      try {
        vals.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw Error(Error::Code::data,
                    "bad number in trajectory csv line " + std::to_string(lineno));
      }
    }
    if (vals.size() != cols.size())
      throw Error(Error::Code::data,
                  "wrong column count in trajectory csv line " + std::to_string(lineno));
    t.push_back(vals[0]);
    u.push_back(vals[1]);
    if (has_du) du.push_back(vals[2]);
    if (has_ddu) ddu.push_back(vals[3]);
  }

  Trajectory out;
  auto n = static_cast<Eigen::Index>(t.size());
  out.t = Eigen::Map<const Eigen::VectorXd>(t.data(), n);
  out.u = Eigen::Map<const Eigen::VectorXd>(u.data(), n);
  if (has_du) out.du = Eigen::Map<const Eigen::VectorXd>(du.data(), n);
  if (has_ddu) out.ddu = Eigen::Map<const Eigen::VectorXd>(ddu.data(), n);
  if (n >= 2) out.fs = 1.0 / (out.t[1] - out.t[0]);
  return out;
}

}  // namespace odisc
