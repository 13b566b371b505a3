#include "odisc/smoother.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>
#include <vector>

#include "odisc/common.hpp"
#include "nn_util.hpp"

namespace odisc {

using detail::Adam;
using detail::put;
using detail::take;

namespace {

constexpr int kH = SmootherNet::kHidden;
constexpr std::uint32_t kCheckpointVersion = 1;

std::uint64_t arch_hash() { return fnv1a("silu-mlp/1-32-32-1"); }

// Flat layout: W1 (h), b1 (h), W2 (h*h, column major), b2 (h), W3 (h), b3.
struct Offsets {
  static constexpr int w1 = 0;
  static constexpr int b1 = kH;
  static constexpr int w2 = 2 * kH;
  static constexpr int b2 = 2 * kH + kH * kH;
  static constexpr int w3 = 3 * kH + kH * kH;
  static constexpr int b3 = 4 * kH + kH * kH;
};

struct LayerCache {
  Eigen::ArrayXXd a0, a1, a2;  // pre-activations and their t-derivatives
  Eigen::ArrayXXd s, f1, f2;   // sigmoid, silu', silu''
  Eigen::ArrayXXd z0, z1, z2;  // activations and their t-derivatives
};

void silu_forward(LayerCache& c) {
  c.s = 1.0 / (1.0 + (-c.a0).exp());
  const Eigen::ArrayXXd p = c.s * (1.0 - c.s);
  c.f1 = c.s + c.a0 * p;
  c.f2 = 2.0 * p + c.a0 * p * (1.0 - 2.0 * c.s);
  c.z0 = c.a0 * c.s;
  c.z1 = c.f1 * c.a1;
  c.z2 = c.f2 * c.a1.square() + c.f1 * c.a2;
}

struct ForwardCache {
  Eigen::VectorXd x0;  // normalized inputs
  double alpha = 0.0;  // dx/dt
  LayerCache l1, l2;
  Eigen::VectorXd y0, y1, y2;
};

void forward(const Eigen::VectorXd& theta, double t_lo, double t_hi,
             const Eigen::VectorXd& t, ForwardCache& fc) {
  const auto n = t.size();
  Eigen::Map<const Eigen::VectorXd> w1(theta.data() + Offsets::w1, kH);
  Eigen::Map<const Eigen::VectorXd> b1(theta.data() + Offsets::b1, kH);
  Eigen::Map<const Eigen::MatrixXd> w2(theta.data() + Offsets::w2, kH, kH);
  Eigen::Map<const Eigen::VectorXd> b2(theta.data() + Offsets::b2, kH);
  Eigen::Map<const Eigen::VectorXd> w3(theta.data() + Offsets::w3, kH);
  const double b3 = theta[Offsets::b3];

  fc.alpha = 2.0 / (t_hi - t_lo);
  fc.x0 = fc.alpha * (t.array() - t_lo) - 1.0;

  fc.l1.a0 = (w1 * fc.x0.transpose()).colwise() + b1;
  fc.l1.a1 = (w1 * fc.alpha).replicate(1, n);
  fc.l1.a2 = Eigen::MatrixXd::Zero(kH, n);
  silu_forward(fc.l1);

  fc.l2.a0 = (w2 * fc.l1.z0.matrix()).colwise() + b2;
  fc.l2.a1 = w2 * fc.l1.z1.matrix();
  fc.l2.a2 = w2 * fc.l1.z2.matrix();
  silu_forward(fc.l2);

  fc.y0 = (w3.transpose() * fc.l2.z0.matrix()).transpose();
  fc.y0.array() += b3;
  fc.y1 = (w3.transpose() * fc.l2.z1.matrix()).transpose();
  fc.y2 = (w3.transpose() * fc.l2.z2.matrix()).transpose();
}

// silu''' from the cached sigmoid.
Eigen::ArrayXXd silu_f3(const LayerCache& c) {
  const Eigen::ArrayXXd p = c.s * (1.0 - c.s);
  const Eigen::ArrayXXd q = p * (1.0 - 2.0 * c.s);
  return 3.0 * q + c.a0 * (q * (1.0 - 2.0 * c.s) - 2.0 * p.square());
}

void silu_backward(const LayerCache& c, const Eigen::ArrayXXd& gz0,
                   const Eigen::ArrayXXd& gz1, const Eigen::ArrayXXd& gz2,
                   Eigen::ArrayXXd& ga0, Eigen::ArrayXXd& ga1,
                   Eigen::ArrayXXd& ga2) {
  const Eigen::ArrayXXd f3 = silu_f3(c);
  ga0 = gz0 * c.f1 + gz1 * c.f2 * c.a1 +
        gz2 * (f3 * c.a1.square() + c.f2 * c.a2);
  ga1 = gz1 * c.f1 + 2.0 * gz2 * c.f2 * c.a1;
  ga2 = gz2 * c.f1;
}

void backward(const Eigen::VectorXd& theta, const ForwardCache& fc,
              const Eigen::VectorXd& gy0, const Eigen::VectorXd& gy1,
              const Eigen::VectorXd& gy2, Eigen::VectorXd& grad) {
  Eigen::Map<const Eigen::MatrixXd> w2(theta.data() + Offsets::w2, kH, kH);
  Eigen::Map<const Eigen::VectorXd> w3(theta.data() + Offsets::w3, kH);

  grad.setZero(SmootherNet::n_params());
  Eigen::Map<Eigen::VectorXd> gw1(grad.data() + Offsets::w1, kH);
  Eigen::Map<Eigen::VectorXd> gb1(grad.data() + Offsets::b1, kH);
  Eigen::Map<Eigen::MatrixXd> gw2(grad.data() + Offsets::w2, kH, kH);
  Eigen::Map<Eigen::VectorXd> gb2(grad.data() + Offsets::b2, kH);
  Eigen::Map<Eigen::VectorXd> gw3(grad.data() + Offsets::w3, kH);

  gw3 = fc.l2.z0.matrix() * gy0 + fc.l2.z1.matrix() * gy1 +
        fc.l2.z2.matrix() * gy2;
  grad[Offsets::b3] = gy0.sum();

  const Eigen::ArrayXXd gz20 = w3 * gy0.transpose();
  const Eigen::ArrayXXd gz21 = w3 * gy1.transpose();
  const Eigen::ArrayXXd gz22 = w3 * gy2.transpose();

  Eigen::ArrayXXd ga20, ga21, ga22;
  silu_backward(fc.l2, gz20, gz21, gz22, ga20, ga21, ga22);

  gw2 = ga20.matrix() * fc.l1.z0.matrix().transpose() +
        ga21.matrix() * fc.l1.z1.matrix().transpose() +
        ga22.matrix() * fc.l1.z2.matrix().transpose();
  gb2 = ga20.rowwise().sum();

  const Eigen::ArrayXXd gz10 = w2.transpose() * ga20.matrix();
  const Eigen::ArrayXXd gz11 = w2.transpose() * ga21.matrix();
  const Eigen::ArrayXXd gz12 = w2.transpose() * ga22.matrix();

  Eigen::ArrayXXd ga10, ga11, ga12;
  silu_backward(fc.l1, gz10, gz11, gz12, ga10, ga11, ga12);

  gw1 = ga10.matrix() * fc.x0 +
        ga11.rowwise().sum().matrix() * fc.alpha;
  gb1 = ga10.rowwise().sum();
}

}  // namespace

SmootherNet::SmootherNet(double t_lo, double t_hi, std::uint64_t seed)
    : t_lo_(t_lo), t_hi_(t_hi) {
  if (!(t_hi > t_lo))
    throw Error(Error::Code::config, "smoother needs a non-empty time range");
  theta_.resize(n_params());
  auto rng = make_rng(seed);
  auto fill = [&rng](double* p, int count, int fan_in) {
    const double k = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-k, k);
    for (int i = 0; i < count; ++i) p[i] = dist(rng);
  };
  fill(theta_.data() + Offsets::w1, kH, 1);
  fill(theta_.data() + Offsets::b1, kH, 1);
  fill(theta_.data() + Offsets::w2, kH * kH, kH);
  fill(theta_.data() + Offsets::b2, kH, kH);
  fill(theta_.data() + Offsets::w3, kH, kH);
  fill(theta_.data() + Offsets::b3, 1, kH);
}

SmootherNet::Triple SmootherNet::derivatives(
    const Eigen::VectorXd& t_grid) const {
  if (theta_.size() != n_params())
    throw Error(Error::Code::config, "smoother net is uninitialized");
  ForwardCache fc;
  forward(theta_, t_lo_, t_hi_, t_grid, fc);
  return Triple{fc.y0, fc.y1, fc.y2};
}

Trajectory SmootherNet::smooth(const Eigen::VectorXd& t_grid) const {
  Triple trip = derivatives(t_grid);
  Trajectory traj;
  traj.t = t_grid;
  traj.u = std::move(trip.u);
  traj.du = std::move(trip.du);
  traj.ddu = std::move(trip.ddu);
  traj.provenance = Trajectory::Provenance::smoothed;
  if (t_grid.size() > 1) traj.fs = 1.0 / (t_grid[1] - t_grid[0]);
  return traj;
}

std::string SmootherNet::serialize() const {
  std::string out;
  out.append("ODSM", 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, arch_hash());
  put<double>(out, t_lo_);
  put<double>(out, t_hi_);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(theta_.size()));
  for (Eigen::Index i = 0; i < theta_.size(); ++i) put<double>(out, theta_[i]);
  return out;
}

SmootherNet SmootherNet::deserialize(const std::string& blob) {
  if (blob.size() < 4 || blob.compare(0, 4, "ODSM") != 0)
    throw Error(Error::Code::checkpoint, "not a smoother checkpoint");
  size_t pos = 4;
  if (take<std::uint32_t>(blob, pos) != kCheckpointVersion)
    throw Error(Error::Code::checkpoint, "unsupported checkpoint version");
  if (take<std::uint64_t>(blob, pos) != arch_hash())
    throw Error(Error::Code::checkpoint, "architecture hash mismatch");
  SmootherNet net;
  net.t_lo_ = take<double>(blob, pos);
  net.t_hi_ = take<double>(blob, pos);
  const auto count = take<std::uint32_t>(blob, pos);
  if (count != static_cast<std::uint32_t>(n_params()))
    throw Error(Error::Code::checkpoint, "parameter count mismatch");
  net.theta_.resize(count);
  for (std::uint32_t i = 0; i < count; ++i)
    net.theta_[i] = take<double>(blob, pos);
  return net;
}

double displacement_loss(const SmootherNet& net, const Eigen::VectorXd& t,
                         const Eigen::VectorXd& u, Eigen::VectorXd* grad) {
  const auto n = t.size();
  if (n == 0 || u.size() != n)
    throw Error(Error::Code::data, "displacement loss needs matching t and u");
  ForwardCache fc;
  forward(net.params(), net.t_lo(), net.t_hi(), t, fc);
  const Eigen::VectorXd r = fc.y0 - u;
  const double loss = r.squaredNorm() / static_cast<double>(n);
  if (grad) {
    const Eigen::VectorXd gy0 = 2.0 * r / static_cast<double>(n);
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(n);
    backward(net.params(), fc, gy0, zero, zero, *grad);
  }
  return loss;
}

Eigen::VectorXd fitted_trend(const Eigen::VectorXd& t, const Eigen::VectorXd& y,
                             int degree) {
  const auto n = t.size();
  if (n == 0 || y.size() != n)
    throw Error(Error::Code::data, "trend fit needs matching t and y");
  const double mean = y.mean();
  if (degree == 0) return Eigen::VectorXd::Constant(n, mean);
  if (degree != 1)
    throw Error(Error::Code::config, "trend degree must be 0 or 1");
  const Eigen::VectorXd tc = t.array() - t.mean();
  const double denom = tc.squaredNorm();
  const double slope = denom > 0.0 ? tc.dot(y) / denom : 0.0;
  return (mean + slope * tc.array()).matrix();
}

double acceleration_loss(const SmootherNet& net, const Eigen::VectorXd& t,
                         const Eigen::VectorXd& ddu, double beta,
                         Eigen::Index window_start, double u0, double du0,
                         Eigen::VectorXd* grad, AccelLossParts* parts) {
  const auto n = t.size();
  if (n == 0 || ddu.size() != n)
    throw Error(Error::Code::data,
                "acceleration loss needs matching t and ddu");
  if (beta > 0.0 && (window_start < 0 || n - window_start < 3))
    throw Error(Error::Code::config,
                "anti-drift window needs at least three samples");
  ForwardCache fc;
  forward(net.params(), net.t_lo(), net.t_hi(), t, fc);

  const double dn = static_cast<double>(n);
  const Eigen::VectorXd rp = fc.y2 - ddu;
  const double pred = rp.squaredNorm() / dn;

  double drift = 0.0;
  Eigen::VectorXd trend_u, trend_du;
  Eigen::Index m = 0;
  if (beta > 0.0) {
    m = n - window_start;
    const Eigen::VectorXd tw = t.segment(window_start, m);
    trend_u = fitted_trend(tw, fc.y0.segment(window_start, m), 1);
    trend_du = fitted_trend(tw, fc.y1.segment(window_start, m), 0);
    drift = (trend_u.squaredNorm() + trend_du.squaredNorm()) /
            static_cast<double>(m);
  }

  const double ic_u = fc.y0[0] - u0;
  const double ic_du = fc.y1[0] - du0;
  const double ic = ic_u * ic_u + ic_du * ic_du;

  if (parts) *parts = AccelLossParts{pred, drift, ic};
  const double loss = pred + beta * drift + ic;

  if (grad) {
    Eigen::VectorXd gy0 = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd gy1 = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd gy2 = 2.0 * rp / dn;
    if (beta > 0.0) {
      // The trend is an orthogonal projection of the window values, so the
      // gradient of its squared norm is twice the trend itself.
      gy0.segment(window_start, m) =
          (2.0 * beta / static_cast<double>(m)) * trend_u;
      gy1.segment(window_start, m) =
          (2.0 * beta / static_cast<double>(m)) * trend_du;
    }
    gy0[0] += 2.0 * ic_u;
    gy1[0] += 2.0 * ic_du;
    backward(net.params(), fc, gy0, gy1, gy2, *grad);
  }
  return loss;
}

namespace {

double scheduled_lr(const SmootherConfig& cfg, int epoch) {
  if (cfg.step_size <= 0) return cfg.lr;
  return cfg.lr * std::pow(cfg.gamma, epoch / cfg.step_size);
}

}  // namespace

SmootherNet fit_on_displacement(const Trajectory& obs,
                                const SmootherConfig& cfg) {
  const auto n = obs.t.size();
  if (n < 2 || obs.u.size() != n)
    throw Error(Error::Code::data,
                "displacement fit needs a u channel on a real grid");
  SmootherNet net(obs.t[0], obs.t[n - 1], cfg.seed);
  Adam adam(SmootherNet::n_params());
  auto rng = make_rng(mix_seed(cfg.seed, 1));
  std::vector<Eigen::Index> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  const Eigen::Index batch =
      std::min<Eigen::Index>(n, std::max(1, cfg.batch));
  Eigen::VectorXd grad;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = scheduled_lr(cfg, epoch);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (Eigen::Index start = 0; start < n; start += batch) {
      const Eigen::Index len = std::min(batch, n - start);
      Eigen::VectorXd tb(len), ub(len);
      for (Eigen::Index i = 0; i < len; ++i) {
        tb[i] = obs.t[idx[start + i]];
        ub[i] = obs.u[idx[start + i]];
      }
      const double loss = displacement_loss(net, tb, ub, &grad);
      if (!std::isfinite(loss))
        throw Error(Error::Code::diverged,
                    "displacement fit diverged at epoch " +
                        std::to_string(epoch));
      adam.step(net.params(), grad, lr);
    }
  }
  return net;
}

SmootherNet fit_on_acceleration(const Trajectory& obs,
                                const SmootherConfig& cfg) {
  const auto n = obs.t.size();
  if (n < 2 || obs.ddu.size() != n)
    throw Error(Error::Code::data,
                "acceleration fit needs a ddu channel on a real grid");
  if (!cfg.have_ics)
    throw Error(Error::Code::config,
                "acceleration fit needs initial conditions");
  Eigen::Index window_start = 0;
  if (cfg.beta_ddu > 0.0) {
    const double span = obs.t[n - 1] - obs.t[0];
    if (!(cfg.force_period > 0.0) || cfg.force_period > span / 2.0)
      throw Error(Error::Code::config,
                  "anti-drift needs 0 < T <= half the time span");
    while (window_start < n &&
           obs.t[window_start] < obs.t[0] + cfg.force_period - 1e-12)
      ++window_start;
  }
  SmootherNet net(obs.t[0], obs.t[n - 1], cfg.seed);
  Adam adam(SmootherNet::n_params());
  Eigen::VectorXd grad;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double loss =
        acceleration_loss(net, obs.t, obs.ddu, cfg.beta_ddu, window_start,
                          cfg.u0, cfg.du0, &grad);
    if (!std::isfinite(loss))
      throw Error(Error::Code::diverged,
                  "acceleration fit diverged at epoch " +
                      std::to_string(epoch));
    adam.step(net.params(), grad, scheduled_lr(cfg, epoch));
  }
  return net;
}

}  // namespace odisc
