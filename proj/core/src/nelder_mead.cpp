#include <odisc/nelder_mead.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <odisc/common.hpp>

namespace odisc {

NelderMeadResult nelder_mead(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& x0, const NelderMeadConfig& cfg) {
  const int k = static_cast<int>(x0.size());
  NelderMeadResult res;
  if (k == 0) {
    res.best_x = x0;
    res.best_f = f(x0);
    res.evaluations = 1;
    return res;
  }
  const int budget = cfg.max_evals > 0 ? cfg.max_evals : 200 * k;

  std::vector<Eigen::VectorXd> xs(static_cast<std::size_t>(k + 1), x0);
  std::vector<double> fs(static_cast<std::size_t>(k + 1));
  for (int i = 1; i <= k; ++i) {
    double& c = xs[static_cast<std::size_t>(i)][i - 1];
    c = c != 0.0 ? 1.05 * c : 0.00025;
  }
  for (int i = 0; i <= k && res.evaluations < budget; ++i) {
    fs[static_cast<std::size_t>(i)] = f(xs[static_cast<std::size_t>(i)]);
    ++res.evaluations;
  }

  std::vector<int> ord(static_cast<std::size_t>(k + 1));
  auto sort_simplex = [&]() {
    std::iota(ord.begin(), ord.end(), 0);
    std::stable_sort(ord.begin(), ord.end(), [&](int a, int b) {
      return fs[static_cast<std::size_t>(a)] < fs[static_cast<std::size_t>(b)];
    });
  };

  while (res.evaluations < budget) {
    sort_simplex();
    const int lo = ord[0], hi = ord[static_cast<std::size_t>(k)];
    double span_x = 0.0, span_f = 0.0;
    for (int i = 1; i <= k; ++i) {
      const int j = ord[static_cast<std::size_t>(i)];
      span_x = std::max(span_x, (xs[static_cast<std::size_t>(j)] -
                                 xs[static_cast<std::size_t>(lo)])
                                    .cwiseAbs()
                                    .maxCoeff());
      span_f = std::max(span_f, std::abs(fs[static_cast<std::size_t>(j)] -
                                         fs[static_cast<std::size_t>(lo)]));
    }
    if (span_x <= cfg.x_tol && span_f <= cfg.f_tol) break;

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(k);
    for (int i = 0; i < k; ++i)
      centroid += xs[static_cast<std::size_t>(ord[static_cast<std::size_t>(i)])];
    centroid /= double(k);

    auto& xh = xs[static_cast<std::size_t>(hi)];
    auto& fh = fs[static_cast<std::size_t>(hi)];
    const double f_lo = fs[static_cast<std::size_t>(lo)];
    const double f_second =
        fs[static_cast<std::size_t>(ord[static_cast<std::size_t>(k - 1)])];

    const Eigen::VectorXd xr = centroid + (centroid - xh);
    const double fr = f(xr);
    ++res.evaluations;

    if (fr < f_lo && res.evaluations < budget) {
      const Eigen::VectorXd xe = centroid + 2.0 * (centroid - xh);
      const double fe = f(xe);
      ++res.evaluations;
      if (fe < fr) {
        xh = xe;
        fh = fe;
      } else {
        xh = xr;
        fh = fr;
      }
    } else if (fr < f_second) {
      xh = xr;
      fh = fr;
    } else if (res.evaluations < budget) {
      const bool outside = fr < fh;
      const Eigen::VectorXd xc =
          centroid + 0.5 * ((outside ? xr : xh) - centroid);
      const double fc = f(xc);
      ++res.evaluations;
      if (fc < (outside ? fr : fh)) {
        xh = xc;
        fh = fc;
      } else {
        const auto& x_lo = xs[static_cast<std::size_t>(lo)];
        for (int i = 1; i <= k && res.evaluations < budget; ++i) {
          const int j = ord[static_cast<std::size_t>(i)];
          xs[static_cast<std::size_t>(j)] =
              x_lo + 0.5 * (xs[static_cast<std::size_t>(j)] - x_lo);
          fs[static_cast<std::size_t>(j)] = f(xs[static_cast<std::size_t>(j)]);
          ++res.evaluations;
        }
      }
    }
  }

  sort_simplex();
  res.best_x = xs[static_cast<std::size_t>(ord[0])];
  res.best_f = fs[static_cast<std::size_t>(ord[0])];
  return res;
}

}  // namespace odisc
