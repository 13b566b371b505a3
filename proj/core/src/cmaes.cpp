#include <odisc/cmaes.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <odisc/common.hpp>

namespace odisc {

namespace {

struct Strategy {
  int lambda, mu;
  Eigen::VectorXd weights;  // mu entries, positive, summing to 1
  double mu_eff, c_sigma, d_sigma, c_c, c_1, c_mu, chi_n;
};

Strategy make_strategy(int d, int lambda) {
  Strategy s;
  s.lambda = lambda > 0 ? lambda
                        : 4 + static_cast<int>(3.0 * std::log(double(d)));
  s.mu = s.lambda / 2;
  s.weights.resize(s.mu);
  for (int i = 0; i < s.mu; ++i)
    s.weights[i] = std::log(s.lambda / 2.0 + 0.5) - std::log(i + 1.0);
  s.weights /= s.weights.sum();
  s.mu_eff = 1.0 / s.weights.squaredNorm();
  const double n = d;
  s.c_sigma = (s.mu_eff + 2.0) / (n + s.mu_eff + 5.0);
  s.d_sigma = 1.0 + s.c_sigma +
              2.0 * std::max(0.0, std::sqrt((s.mu_eff - 1.0) / (n + 1.0)) - 1.0);
  s.c_c = (4.0 + s.mu_eff / n) / (n + 4.0 + 2.0 * s.mu_eff / n);
  s.c_1 = 2.0 / ((n + 1.3) * (n + 1.3) + s.mu_eff);
  s.c_mu = std::min(1.0 - s.c_1, 2.0 * (s.mu_eff - 2.0 + 1.0 / s.mu_eff) /
                                     ((n + 2.0) * (n + 2.0) + s.mu_eff));
  s.chi_n = std::sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));
  return s;
}

}  // namespace

CmaesResult cmaes_minimize(
    const std::function<double(const Eigen::VectorXd&)>& f, int d,
    const CmaesConfig& cfg) {
  if (d < 1) throw Error(Error::Code::config, "cmaes dimension must be >= 1");
  if (cfg.sigma0 <= 0.0)
    throw Error(Error::Code::config, "cmaes sigma0 must be > 0");
  const Strategy st = make_strategy(d, cfg.lambda);
  if (st.lambda < 2)
    throw Error(Error::Code::config, "cmaes population must be >= 2");

  Eigen::VectorXd mean =
      cfg.x0.size() ? cfg.x0 : Eigen::VectorXd::Zero(d);
  if (mean.size() != d)
    throw Error(Error::Code::config, "cmaes x0 dimension mismatch");
  double sigma = cfg.sigma0;
  Eigen::MatrixXd C = Eigen::MatrixXd::Identity(d, d);
  Eigen::VectorXd p_sigma = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd p_c = Eigen::VectorXd::Zero(d);

  CmaesResult res;
  res.best_x = mean;
  Eigen::MatrixXd Y(d, st.lambda), X(d, st.lambda);
  std::vector<double> fx(static_cast<std::size_t>(st.lambda));
  std::vector<int> rank(static_cast<std::size_t>(st.lambda));
  std::normal_distribution<double> nd;

  for (int gen = 1; gen <= cfg.max_generations; ++gen) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(C);
    Eigen::VectorXd ev = eig.eigenvalues();
    // regularize a degenerate or indefinite covariance
    const double floor_ev = std::max(ev.maxCoeff(), 1.0) * 1e-14;
    for (int i = 0; i < d; ++i) ev[i] = std::max(ev[i], floor_ev);
    const Eigen::MatrixXd& B = eig.eigenvectors();
    const Eigen::VectorXd D = ev.cwiseSqrt();

    for (int k = 0; k < st.lambda; ++k) {
      auto rng = make_rng(cfg.seed, static_cast<std::uint64_t>(gen),
                          static_cast<std::uint64_t>(k));
      Eigen::VectorXd z(d);
      for (int i = 0; i < d; ++i) z[i] = nd(rng);
      Y.col(k) = B * D.cwiseProduct(z);
      X.col(k) = mean + sigma * Y.col(k);
      fx[static_cast<std::size_t>(k)] = f(X.col(k));
      ++res.evaluations;
    }

    std::iota(rank.begin(), rank.end(), 0);
    std::stable_sort(rank.begin(), rank.end(), [&](int a, int b) {
      return fx[static_cast<std::size_t>(a)] < fx[static_cast<std::size_t>(b)];
    });
    const double gen_best = fx[static_cast<std::size_t>(rank[0])];
    if (gen_best < res.best_f) {
      res.best_f = gen_best;
      res.best_x = X.col(rank[0]);
    }

    Eigen::VectorXd y_w = Eigen::VectorXd::Zero(d);
    for (int i = 0; i < st.mu; ++i)
      y_w += st.weights[i] * Y.col(rank[static_cast<std::size_t>(i)]);
    mean += sigma * y_w;

    const Eigen::MatrixXd c_inv_sqrt =
        B * D.cwiseInverse().asDiagonal() * B.transpose();
    p_sigma = (1.0 - st.c_sigma) * p_sigma +
              std::sqrt(st.c_sigma * (2.0 - st.c_sigma) * st.mu_eff) *
                  (c_inv_sqrt * y_w);
    const double ps_norm = p_sigma.norm();
    const double expect =
        ps_norm / std::sqrt(1.0 - std::pow(1.0 - st.c_sigma, 2.0 * gen));
    const bool h_sigma = expect < (1.4 + 2.0 / (d + 1.0)) * st.chi_n;

    p_c = (1.0 - st.c_c) * p_c;
    if (h_sigma)
      p_c += std::sqrt(st.c_c * (2.0 - st.c_c) * st.mu_eff) * y_w;

    Eigen::MatrixXd rank_mu = Eigen::MatrixXd::Zero(d, d);
    for (int i = 0; i < st.mu; ++i) {
      const auto y = Y.col(rank[static_cast<std::size_t>(i)]);
      rank_mu.noalias() += st.weights[i] * y * y.transpose();
    }
    const double c1a =
        st.c_1 * (1.0 - (h_sigma ? 0.0 : st.c_c * (2.0 - st.c_c)));
    C = (1.0 - c1a - st.c_mu) * C + st.c_1 * (p_c * p_c.transpose()) +
        st.c_mu * rank_mu;
    C = 0.5 * (C + C.transpose().eval());

    sigma *= std::exp((st.c_sigma / st.d_sigma) * (ps_norm / st.chi_n - 1.0));
    if (!std::isfinite(sigma) || !C.allFinite() || !mean.allFinite()) {
      C.setIdentity();
      p_sigma.setZero();
      p_c.setZero();
      sigma = cfg.sigma0;
      if (!mean.allFinite()) mean = res.best_x;
    }

    res.history.push_back({gen, gen_best, sigma});
    if (cfg.on_generation) cfg.on_generation(gen);
    if (res.best_f <= cfg.stop_f) break;
  }
  return res;
}

}  // namespace odisc
