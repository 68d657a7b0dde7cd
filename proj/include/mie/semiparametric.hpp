#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mie/dataset.hpp"
#include "mie/error.hpp"
#include "mie/learners.hpp"
#include "mie/math.hpp"

namespace mie {

struct SemiparamOptions {
  double bandwidth_resid = 0.0;  // step-2 local-linear bandwidth (0 = Silverman on p-hat)
  // Step-4 local-quadratic bandwidth. The default targets the first
  // derivative, whose optimal rate is n^{-1/7}: 2 min(sd, IQR/1.34) n^{-1/7}.
  // Silverman's n^{-1/5} rule undersmooths K' badly.
  double bandwidth_k = 0.0;
  int grid_size = 1025;  // K' evaluation grid over the p-hat support
  int logistic_max_iter = 100;
  double logistic_tol = 1e-8;
};

// Rule-of-thumb bandwidth for first-derivative estimation by local
// quadratic smoothing.
inline double derivative_bandwidth(const Eigen::VectorXd& v) {
  const double base = silverman_bandwidth(v) / 0.9;  // min(sd, IQR/1.34) n^{-1/5}
  const auto n = static_cast<double>(v.size());
  return 2.0 * base * std::pow(n, 0.2 - 1.0 / 7.0);
}

// Partialing-out fit of E[Y|x,p] = beta0'x + (beta1-beta0)'x p + K(p):
//   1. logit propensity on Z;
//   2. local-linear residualization of Y, X and X*p-hat on p-hat;
//   3. no-intercept OLS of e_Y on (e_X, e_Xp) for the slope coefficients;
//   4. local-quadratic fit of the remaining outcome residual on p-hat for
//      K and K'.
// Functions of p-hat absorb the intercepts, so beta0_hat/beta_diff_hat hold
// slopes only and K' carries the treatment-effect intercept. MTE(x,u) =
// beta_diff'x + K'(u).
//
// K' is tabulated on a grid; the outcome mean uses the exact running integral
// of the interpolated K', anchored at the step-4 level near the median p-hat,
// which makes d/dp outcome_mean == mte hold by construction.
struct SemiparamMTEFit {
  LogisticModel propensity;           // over [1, Z]
  Eigen::VectorXd beta0_hat;          // dx slopes
  Eigen::VectorXd beta_diff_hat;      // dx slopes
  LocalPolyFit kprime_fit;            // degree-2 fit of e*_Y on p-hat
  double support_lo = 0.0, support_hi = 1.0;
  Eigen::VectorXd fitted_p0;          // training p-hat values

  Eigen::VectorXd grid_p, grid_kprime, grid_kint;
  static constexpr bool strict_support = true;
  static constexpr const char* kind_name = "semiparametric";

  double propensity_at(const Eigen::VectorXd& z_row) const {
    double eta = propensity.coefficients[0];
    for (Eigen::Index j = 0; j < z_row.size(); ++j)
      eta += propensity.coefficients[j + 1] * z_row[j];
    return expit(eta);
  }

  double kprime_at(double u) const {
    check_support(u);
    const auto cell = locate(u);
    const double t = u - grid_p[cell];
    const double slope = (grid_kprime[cell + 1] - grid_kprime[cell]) /
                         (grid_p[cell + 1] - grid_p[cell]);
    return grid_kprime[cell] + slope * t;
  }

  double k_at(double u) const {
    check_support(u);
    const auto cell = locate(u);
    const double t = u - grid_p[cell];
    const double slope = (grid_kprime[cell + 1] - grid_kprime[cell]) /
                         (grid_p[cell + 1] - grid_p[cell]);
    return grid_kint[cell] + t * (grid_kprime[cell] + 0.5 * slope * t);
  }

  double mte_at(const Eigen::VectorXd& x_row, double u) const {
    return beta_diff_hat.dot(x_row) + kprime_at(u);
  }

  double outcome_mean_at(const Eigen::VectorXd& x_row, double p) const {
    return beta0_hat.dot(x_row) + beta_diff_hat.dot(x_row) * p + k_at(p);
  }

 private:
  void check_support(double u) const {
    if (u < support_lo - 1e-12 || u > support_hi + 1e-12)
      throw support_error("semiparametric MTE evaluated at u=" + std::to_string(u) +
                          " outside the fitted propensity support [" +
                          std::to_string(support_lo) + ", " + std::to_string(support_hi) +
                          "]");
  }

  Eigen::Index locate(double u) const {
    const auto m = grid_p.size();
    const double step = (grid_p[m - 1] - grid_p[0]) / static_cast<double>(m - 1);
    auto cell = static_cast<Eigen::Index>((u - grid_p[0]) / step);
    return std::clamp<Eigen::Index>(cell, 0, m - 2);
  }
};

namespace detail {

// Local-linear smooth of several columns against the same running variable,
// evaluated at the training points themselves. Kernel moments are shared
// across columns, which keeps the n^2 sweep affordable.
inline Eigen::MatrixXd local_linear_fitted(const Eigen::VectorXd& run,
                                           const Eigen::MatrixXd& columns, double bandwidth) {
  const auto n = run.size();
  const auto k = columns.cols();
  Eigen::MatrixXd fitted(n, k);
  Eigen::ArrayXd t(n), w(n), wt(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    t = (run.array() - run[i]) / bandwidth;
    w = (-0.5 * t.square()).exp();
    wt = w * t;
    const double s0 = w.sum();
    const double s1 = wt.sum();
    const double s2 = (wt * t).sum();
    const double det = s0 * s2 - s1 * s1;
    if (!(std::abs(det) > 1e-300) || !(s0 > 0.0))
      throw sample_error("local-linear residualization: degenerate window at p=" +
                         std::to_string(run[i]));
    for (Eigen::Index c = 0; c < k; ++c) {
      const double t0 = (w * columns.col(c).array()).sum();
      const double t1 = (wt * columns.col(c).array()).sum();
      fitted(i, c) = (s2 * t0 - s1 * t1) / det;  // local intercept at run[i]
    }
  }
  return fitted;
}

}  // namespace detail

inline SemiparamMTEFit fit_semiparametric_liv(const Dataset& data,
                                              const SemiparamOptions& opts = {}) {
  require_valid(data);
  if (!data.z)
    throw domain_error("fit_semiparametric_liv: dataset has no instrument block");
  if (data.dz() <= data.dx())
    throw domain_error("fit_semiparametric_liv: Z must be strictly larger than X");

  const auto n = data.n();
  const auto dx = data.dx();
  SemiparamMTEFit fit;

  // Step 1: propensity scores from a logit on Z.
  const Eigen::MatrixXd zd = with_intercept(*data.z);
  fit.propensity = fit_logistic_irls(zd, data.a, opts.logistic_max_iter, opts.logistic_tol);
  fit.fitted_p0 = fit.propensity.predict_prob(zd);
  fit.support_lo = fit.fitted_p0.minCoeff();
  fit.support_hi = fit.fitted_p0.maxCoeff();
  if (fit.support_hi - fit.support_lo < 0.05)
    throw support_error("fit_semiparametric_liv: fitted propensity range narrower than 0.05");

  const double bw2 =
      opts.bandwidth_resid > 0.0 ? opts.bandwidth_resid : silverman_bandwidth(fit.fitted_p0);
  const double bw4 =
      opts.bandwidth_k > 0.0 ? opts.bandwidth_k : derivative_bandwidth(fit.fitted_p0);

  // Step 2: residualize Y, X, X*p-hat on p-hat.
  Eigen::MatrixXd cols(n, 1 + 2 * dx);
  cols.col(0) = data.y;
  for (Eigen::Index j = 0; j < dx; ++j) {
    cols.col(1 + j) = data.x.col(j);
    cols.col(1 + dx + j) = data.x.col(j).array() * fit.fitted_p0.array();
  }
  const Eigen::MatrixXd fitted = detail::local_linear_fitted(fit.fitted_p0, cols, bw2);
  const Eigen::MatrixXd resid = cols - fitted;

  // Step 3: no-intercept OLS of e_Y on (e_X, e_Xp).
  const Eigen::MatrixXd design = resid.rightCols(2 * dx);
  const LinearModel partial = fit_ols(design, resid.col(0));
  fit.beta0_hat = partial.coefficients.head(dx);
  fit.beta_diff_hat = partial.coefficients.tail(dx);

  Eigen::VectorXd e_star = data.y;
  for (Eigen::Index j = 0; j < dx; ++j)
    e_star -= fit.beta0_hat[j] * data.x.col(j) +
              fit.beta_diff_hat[j] * (data.x.col(j).array() * fit.fitted_p0.array()).matrix();

  // Step 4: local quadratic of e*_Y on p-hat gives K-hat and K-hat'.
  fit.kprime_fit = fit_local_poly(fit.fitted_p0, e_star, 2, bw4);

  const int m = std::max(opts.grid_size, 17);
  fit.grid_p.setLinSpaced(m, fit.support_lo, fit.support_hi);
  const LocalPolyEval k_eval = local_poly_eval(fit.kprime_fit, fit.grid_p);
  fit.grid_kprime = k_eval.derivatives;

  // Anchor the K level at the grid point nearest the median p-hat, then
  // integrate the interpolated K' exactly (trapezoid on a uniform grid).
  std::vector<double> sorted_p(fit.fitted_p0.data(), fit.fitted_p0.data() + n);
  std::nth_element(sorted_p.begin(), sorted_p.begin() + n / 2, sorted_p.end());
  const double median_p = sorted_p[n / 2];
  Eigen::Index anchor = 0;
  for (Eigen::Index g = 1; g < m; ++g)
    if (std::abs(fit.grid_p[g] - median_p) < std::abs(fit.grid_p[anchor] - median_p))
      anchor = g;

  fit.grid_kint.resize(m);
  fit.grid_kint[anchor] = k_eval.values[anchor];
  const double dg = (fit.support_hi - fit.support_lo) / static_cast<double>(m - 1);
  for (Eigen::Index g = anchor + 1; g < m; ++g)
    fit.grid_kint[g] =
        fit.grid_kint[g - 1] + 0.5 * dg * (fit.grid_kprime[g - 1] + fit.grid_kprime[g]);
  for (Eigen::Index g = anchor - 1; g >= 0; --g)
    fit.grid_kint[g] =
        fit.grid_kint[g + 1] - 0.5 * dg * (fit.grid_kprime[g] + fit.grid_kprime[g + 1]);
  return fit;
}

}  // namespace mie
