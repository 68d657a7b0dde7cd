#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mie/dataset.hpp"
#include "mie/error.hpp"
#include "mie/learners.hpp"
#include "mie/math.hpp"

namespace mie {

namespace detail {

// log Phi(q) and the inverse Mills ratio phi(q)/Phi(q), stable in the far
// left tail where Phi underflows.
inline double log_normal_cdf(double q) {
  if (q > -30.0) return std::log(normal_cdf(q));
  const double q2 = q * q;
  return -0.5 * q2 - 0.5 * std::log(2.0 * M_PI) - std::log(-q) +
         std::log1p(-1.0 / q2 + 3.0 / (q2 * q2));
}

inline double inverse_mills(double q) {
  if (q > -30.0) return normal_pdf(q) / normal_cdf(q);
  const double q2 = q * q;
  return -q / (1.0 - 1.0 / q2 + 3.0 / (q2 * q2));
}

}  // namespace detail

// Normal generalized Roy model:
//   Y(0) = beta0'[1,X] + eps,  Y(1) = beta1'[1,X] + eps + eta,
//   A = 1{gamma'[1,Z] >= V},  (eps, eta, V) jointly normal, sigma_V = 1.
// The likelihood identifies the arm-specific pairs (sigma0, rho0) for
// controls and (sigma1, rho1) for the treated, where sigma1^2 = var(eps+eta)
// and rho_a is the correlation of the arm error with V. The MTE slope in the
// latent quantile is sigma_eta_v = cov(eta,V) = rho1 sigma1 - rho0 sigma0.
struct RoySwitchingModel {
  Eigen::VectorXd beta0;      // [1, X]
  Eigen::VectorXd beta1;      // [1, X]
  Eigen::VectorXd beta_diff;  // beta1 - beta0
  Eigen::VectorXd gamma;      // [1, Z]

  double sigma0 = 1.0, sigma1 = 1.0;  // arm error SDs
  double rho0 = 0.0, rho1 = 0.0;      // arm error correlations with V

  // Structural parameterization (cov(eps,eta) = 0 normalization).
  double sigma_eps = 1.0;
  double sigma_eta = 0.0;
  double rho_eps_v = 0.0;
  double rho_eta_v = 0.0;
  double sigma_eta_v = 0.0;

  double log_likelihood = 0.0;
  bool converged = false;
  int n_iterations = 0;
  bool rho_clamped = false;      // |rho| ran to the 0.999 boundary
  bool eta_degenerate = false;   // sigma1^2 - sigma0^2 <= 0 in sample

  Eigen::VectorXd beta_diff_se;  // delta-method SEs (0 where tied)
  double sigma_eta_v_se = 0.0;
  double rho0_se = 0.0, rho1_se = 0.0;

  double propensity_at(const Eigen::VectorXd& z_row) const {
    double eta_idx = gamma[0];
    for (Eigen::Index j = 0; j < z_row.size(); ++j) eta_idx += gamma[j + 1] * z_row[j];
    return normal_cdf(eta_idx);
  }

  // MTE(x, u) = (beta1-beta0)'[1,x] + sigma_eta_v * Phi^{-1}(u), u in (0,1).
  double mte_at(const Eigen::VectorXd& x_row, double u) const {
    if (!(u > 0.0 && u < 1.0)) throw domain_error("mte: u must lie strictly inside (0,1)");
    double v = beta_diff[0];
    for (Eigen::Index j = 0; j < x_row.size(); ++j) v += beta_diff[j + 1] * x_row[j];
    return v + sigma_eta_v * normal_quantile(u);
  }

  // E[Y | x, p] = beta0'[1,x] + (beta1-beta0)'[1,x] p + K(p) with
  // K(p) = -sigma_eta_v * phi(Phi^{-1}(p)); d/dp of this expression is the
  // MTE, so the local-IV identity holds exactly for this model.
  double outcome_mean_at(const Eigen::VectorXd& x_row, double p) const {
    double base = beta0[0], diff = beta_diff[0];
    for (Eigen::Index j = 0; j < x_row.size(); ++j) {
      base += beta0[j + 1] * x_row[j];
      diff += beta_diff[j + 1] * x_row[j];
    }
    const double k = (p <= 0.0 || p >= 1.0) ? 0.0 : -sigma_eta_v * normal_pdf(normal_quantile(p));
    return base + diff * p + k;
  }

  double support_lo() const { return 0.0; }
  double support_hi() const { return 1.0; }
  static constexpr bool strict_support = false;
  static constexpr const char* kind_name = "normal";
};

inline double mte_normal(const RoySwitchingModel& model, const Eigen::VectorXd& x, double u) {
  return model.mte_at(x, u);
}

struct RoyMleOptions {
  int max_iter = 500;
  double grad_tol = 1e-7;
  // Outcome columns whose treated and control coefficients are tied
  // (beta1_j = beta0_j); indices refer to X columns (0-based, intercept not
  // included). Used to deliberately restrict the treatment-effect surface.
  std::vector<int> tie_effect_columns;
  // Hold the selection coefficients at the given values (e.g. a separately
  // fitted probit) instead of estimating them jointly. Keeps a deliberately
  // misspecified outcome model from dragging the propensity with it.
  std::optional<Eigen::VectorXd> fix_gamma;
  // Fix rho0 = rho1 = 0: fit the outcome equations as if there were no
  // unobserved selection (K(p) restricted to zero).
  bool no_selection_correction = false;
  bool compute_vcov = true;
};

namespace detail {

struct RoyPacking {
  Eigen::Index dx1 = 0;   // dx + 1
  Eigen::Index dz1 = 0;   // dz + 1
  std::vector<int> free_diff;  // indices into [1, X] with a free treated-control gap
  bool est_gamma = true;
  bool est_rho = true;
  Eigen::VectorXd fixed_gamma;
  Eigen::Index dim = 0;

  Eigen::Index n_diff() const { return static_cast<Eigen::Index>(free_diff.size()); }
  Eigen::Index beta0_at(Eigen::Index j) const { return j; }
  Eigen::Index diff_at(Eigen::Index k) const { return dx1 + k; }
  Eigen::Index gamma_at(Eigen::Index j) const { return dx1 + n_diff() + j; }
  Eigen::Index ts0() const { return dx1 + n_diff() + (est_gamma ? dz1 : 0); }
  Eigen::Index ts1() const { return ts0() + 1; }
  Eigen::Index tr0() const { return ts0() + 2; }
  Eigen::Index tr1() const { return ts0() + 3; }
  Eigen::Index size() const { return ts0() + (est_rho ? 4 : 2); }
};

struct RoyObjective {
  const Eigen::MatrixXd& xd;  // [1, X]
  const Eigen::MatrixXd& zd;  // [1, Z]
  const Eigen::VectorXd& a;
  const Eigen::VectorXd& y;
  RoyPacking pack;

  // Mean negative log-likelihood and its analytic gradient.
  double eval(const Eigen::VectorXd& theta, Eigen::VectorXd* grad) const {
    const auto n = xd.rows();
    const double s0 = std::exp(theta[pack.ts0()]);
    const double s1 = std::exp(theta[pack.ts1()]);
    const double r0 = pack.est_rho ? std::tanh(theta[pack.tr0()]) : 0.0;
    const double r1 = pack.est_rho ? std::tanh(theta[pack.tr1()]) : 0.0;

    Eigen::VectorXd beta0 = theta.segment(0, pack.dx1);
    Eigen::VectorXd diff = Eigen::VectorXd::Zero(pack.dx1);
    for (std::size_t k = 0; k < pack.free_diff.size(); ++k)
      diff[pack.free_diff[k]] = theta[pack.diff_at(static_cast<Eigen::Index>(k))];
    Eigen::VectorXd gamma =
        pack.est_gamma ? theta.segment(pack.gamma_at(0), pack.dz1).eval() : pack.fixed_gamma;

    const Eigen::VectorXd mu0 = xd * beta0;
    const Eigen::VectorXd mud = xd * diff;
    const Eigen::VectorXd c = zd * gamma;

    double nll = 0.0;
    if (grad) grad->setZero(pack.dim);
    for (Eigen::Index i = 0; i < n; ++i) {
      const bool treated = a[i] == 1.0;
      const double sigma = treated ? s1 : s0;
      const double rho = treated ? r1 : r0;
      const double sgn = treated ? 1.0 : -1.0;
      const double mu = mu0[i] + (treated ? mud[i] : 0.0);
      const double w = (y[i] - mu) / sigma;
      const double root = std::sqrt(1.0 - rho * rho);
      const double q = sgn * (c[i] - rho * w) / root;

      nll -= -std::log(sigma) - 0.5 * w * w - 0.5 * std::log(2.0 * M_PI) +
             log_normal_cdf(q);
      if (!grad) continue;

      const double mills = inverse_mills(q);
      const double dl_dmu = w / sigma + mills * sgn * rho / (sigma * root);
      const double dl_dc = mills * sgn / root;
      const double dl_dsigma = (w * w - 1.0) / sigma + mills * sgn * rho * w / (sigma * root);
      const double dl_drho = mills * sgn * (rho * c[i] - w) / (root * root * root);

      for (Eigen::Index j = 0; j < pack.dx1; ++j)
        (*grad)[pack.beta0_at(j)] -= dl_dmu * xd(i, j);
      if (treated)
        for (std::size_t k = 0; k < pack.free_diff.size(); ++k)
          (*grad)[pack.diff_at(static_cast<Eigen::Index>(k))] -=
              dl_dmu * xd(i, pack.free_diff[k]);
      if (pack.est_gamma)
        for (Eigen::Index j = 0; j < pack.dz1; ++j)
          (*grad)[pack.gamma_at(j)] -= dl_dc * zd(i, j);
      if (treated) {
        (*grad)[pack.ts1()] -= dl_dsigma * s1;
        if (pack.est_rho) (*grad)[pack.tr1()] -= dl_drho * (1.0 - r1 * r1);
      } else {
        (*grad)[pack.ts0()] -= dl_dsigma * s0;
        if (pack.est_rho) (*grad)[pack.tr0()] -= dl_drho * (1.0 - r0 * r0);
      }
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    if (grad) *grad *= inv_n;
    return nll * inv_n;
  }
};

// Quasi-Newton (BFGS, inverse-Hessian form) with Armijo backtracking.
struct BfgsResult {
  Eigen::VectorXd x;
  double f = 0.0;
  Eigen::VectorXd grad;
  bool converged = false;
  int iterations = 0;
};

template <typename Objective>
BfgsResult bfgs_minimize(const Objective& obj, Eigen::VectorXd x0, int max_iter,
                         double grad_tol) {
  const auto dim = x0.size();
  BfgsResult res;
  Eigen::MatrixXd h_inv = Eigen::MatrixXd::Identity(dim, dim);
  Eigen::VectorXd g(dim);
  double f = obj.eval(x0, &g);
  Eigen::VectorXd x = x0;

  for (int iter = 1; iter <= max_iter; ++iter) {
    res.iterations = iter;
    if (g.lpNorm<Eigen::Infinity>() < grad_tol) {
      res.converged = true;
      break;
    }
    Eigen::VectorXd dir = -(h_inv * g);
    double slope = dir.dot(g);
    if (!(slope < 0.0)) {  // lost positive-definiteness: restart from steepest descent
      h_inv.setIdentity();
      dir = -g;
      slope = dir.dot(g);
    }
    double step = 1.0;
    double f_new = f;
    Eigen::VectorXd x_new = x;
    bool moved = false;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = x + step * dir;
      f_new = obj.eval(x_new, nullptr);
      if (std::isfinite(f_new) && f_new <= f + 1e-4 * step * slope) {
        moved = true;
        break;
      }
      step *= 0.5;
    }
    if (!moved) break;  // line search stalled

    Eigen::VectorXd g_new(dim);
    obj.eval(x_new, &g_new);
    const Eigen::VectorXd s = x_new - x;
    const Eigen::VectorXd yv = g_new - g;
    const double sy = s.dot(yv);
    if (sy > 1e-12 * s.norm() * yv.norm()) {
      const Eigen::VectorXd hy = h_inv * yv;
      const double yhy = yv.dot(hy);
      // BFGS inverse update
      h_inv += ((sy + yhy) / (sy * sy)) * (s * s.transpose()) -
               (hy * s.transpose() + s * hy.transpose()) / sy;
    }
    const double f_change = std::abs(f - f_new);
    x = x_new;
    f = f_new;
    g = g_new;
    if (f_change < 1e-14 * std::max(1.0, std::abs(f))) {
      res.converged = g.lpNorm<Eigen::Infinity>() < 1e3 * grad_tol;
      break;
    }
  }
  res.x = x;
  res.f = f;
  res.grad = g;
  return res;
}

// Newton probit fit for the warm start.
inline Eigen::VectorXd probit_fit(const Eigen::MatrixXd& design, const Eigen::VectorXd& a) {
  Eigen::VectorXd gamma = Eigen::VectorXd::Zero(design.cols());
  for (int iter = 0; iter < 50; ++iter) {
    const Eigen::VectorXd c = design * gamma;
    Eigen::VectorXd score = Eigen::VectorXd::Zero(design.cols());
    Eigen::MatrixXd info = Eigen::MatrixXd::Zero(design.cols(), design.cols());
    for (Eigen::Index i = 0; i < design.rows(); ++i) {
      const double sgn = a[i] == 1.0 ? 1.0 : -1.0;
      const double m = inverse_mills(sgn * c[i]);
      score += sgn * m * design.row(i).transpose();
      const double p = normal_cdf(c[i]);
      const double fisher = normal_pdf(c[i]) * normal_pdf(c[i]) /
                            std::max(p * (1.0 - p), 1e-10);
      info += fisher * design.row(i).transpose() * design.row(i);
    }
    info.diagonal().array() += 1e-10;
    const Eigen::VectorXd step = info.ldlt().solve(score);
    if (!step.allFinite()) break;
    gamma += step;
    if (step.lpNorm<Eigen::Infinity>() < 1e-10) break;
  }
  return gamma;
}

}  // namespace detail

// Newton probit of labels on a design matrix (used for warm starts and for
// standalone propensity fits over Z).
inline Eigen::VectorXd fit_probit(const Eigen::MatrixXd& design, const Eigen::VectorXd& labels) {
  return detail::probit_fit(design, labels);
}

// Switching-regression log-likelihood of a dataset under given model
// parameters; the independent probe used by the likelihood-surface checks.
inline double roy_log_likelihood(const Dataset& data, const RoySwitchingModel& model) {
  const Eigen::MatrixXd xd = with_intercept(data.x);
  const Eigen::MatrixXd zd = with_intercept(*data.z);
  double ll = 0.0;
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    const bool treated = data.a[i] == 1.0;
    const double sigma = treated ? model.sigma1 : model.sigma0;
    const double rho = treated ? model.rho1 : model.rho0;
    const double sgn = treated ? 1.0 : -1.0;
    const double mu = treated ? xd.row(i).dot(model.beta1) : xd.row(i).dot(model.beta0);
    const double w = (data.y[i] - mu) / sigma;
    const double q = sgn * (zd.row(i).dot(model.gamma) - rho * w) / std::sqrt(1.0 - rho * rho);
    ll += -std::log(sigma) - 0.5 * w * w - 0.5 * std::log(2.0 * M_PI) +
          detail::log_normal_cdf(q);
  }
  return ll;
}

// Maximum likelihood for the normal switching regression: per-row probit
// selection times the conditional normal outcome density of the realized arm,
// maximized by BFGS from an OLS/probit warm start.
inline RoySwitchingModel fit_normal_switching_mle(const Dataset& data,
                                                  const RoyMleOptions& opts = {}) {
  require_valid(data);
  if (!data.z)
    throw domain_error("fit_normal_switching_mle: dataset has no instrument block");
  if (data.dz() <= data.dx())
    throw domain_error(
        "fit_normal_switching_mle: Z must be strictly larger than X (relevance)");

  const Eigen::MatrixXd xd = with_intercept(data.x);
  const Eigen::MatrixXd zd = with_intercept(*data.z);
  const auto n = data.n();

  detail::RoyPacking pack;
  pack.dx1 = xd.cols();
  pack.dz1 = zd.cols();
  for (Eigen::Index j = 0; j < pack.dx1; ++j) {
    const bool tied =
        j > 0 && std::find(opts.tie_effect_columns.begin(), opts.tie_effect_columns.end(),
                           static_cast<int>(j - 1)) != opts.tie_effect_columns.end();
    if (!tied) pack.free_diff.push_back(static_cast<int>(j));
  }
  pack.est_gamma = !opts.fix_gamma.has_value();
  pack.est_rho = !opts.no_selection_correction;
  if (!pack.est_gamma) {
    if (opts.fix_gamma->size() != pack.dz1)
      throw domain_error("fit_normal_switching_mle: fix_gamma must have 1 + dz entries");
    pack.fixed_gamma = *opts.fix_gamma;
  }
  pack.dim = pack.size();

  // Warm start: per-arm OLS for the outcome pieces, Newton probit for gamma.
  std::vector<int> treated_rows, control_rows;
  for (Eigen::Index i = 0; i < n; ++i)
    (data.a[i] == 1.0 ? treated_rows : control_rows).push_back(static_cast<int>(i));
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(pack.dim);
  {
    Eigen::MatrixXd x1(treated_rows.size(), pack.dx1), x0(control_rows.size(), pack.dx1);
    Eigen::VectorXd y1(treated_rows.size()), y0(control_rows.size());
    for (std::size_t i = 0; i < treated_rows.size(); ++i) {
      x1.row(i) = xd.row(treated_rows[i]);
      y1[i] = data.y[treated_rows[i]];
    }
    for (std::size_t i = 0; i < control_rows.size(); ++i) {
      x0.row(i) = xd.row(control_rows[i]);
      y0[i] = data.y[control_rows[i]];
    }
    const LinearModel m0 = fit_ols(x0, y0);
    const LinearModel m1 = fit_ols(x1, y1);
    theta.segment(0, pack.dx1) = m0.coefficients;
    for (std::size_t k = 0; k < pack.free_diff.size(); ++k)
      theta[pack.diff_at(static_cast<Eigen::Index>(k))] =
          m1.coefficients[pack.free_diff[k]] - m0.coefficients[pack.free_diff[k]];
    if (pack.est_gamma) theta.segment(pack.gamma_at(0), pack.dz1) = detail::probit_fit(zd, data.a);
    theta[pack.ts0()] = 0.5 * std::log(std::max(m0.residual_variance, 1e-6));
    theta[pack.ts1()] = 0.5 * std::log(std::max(m1.residual_variance, 1e-6));
  }

  const detail::RoyObjective obj{xd, zd, data.a, data.y, pack};
  const auto res = detail::bfgs_minimize(obj, theta, opts.max_iter, opts.grad_tol);

  RoySwitchingModel model;
  model.converged = res.converged;
  model.n_iterations = res.iterations;
  model.log_likelihood = -res.f * static_cast<double>(n);

  model.beta0 = res.x.segment(0, pack.dx1);
  model.beta_diff = Eigen::VectorXd::Zero(pack.dx1);
  for (std::size_t k = 0; k < pack.free_diff.size(); ++k)
    model.beta_diff[pack.free_diff[k]] = res.x[pack.diff_at(static_cast<Eigen::Index>(k))];
  model.beta1 = model.beta0 + model.beta_diff;
  model.gamma = pack.est_gamma ? res.x.segment(pack.gamma_at(0), pack.dz1).eval()
                               : pack.fixed_gamma;
  model.sigma0 = std::exp(res.x[pack.ts0()]);
  model.sigma1 = std::exp(res.x[pack.ts1()]);
  model.rho0 = pack.est_rho ? std::tanh(res.x[pack.tr0()]) : 0.0;
  model.rho1 = pack.est_rho ? std::tanh(res.x[pack.tr1()]) : 0.0;
  if (std::abs(model.rho0) > 0.999 || std::abs(model.rho1) > 0.999) {
    model.rho_clamped = true;
    model.rho0 = std::clamp(model.rho0, -0.999, 0.999);
    model.rho1 = std::clamp(model.rho1, -0.999, 0.999);
  }

  // Structural parameters under cov(eps,eta) = 0.
  model.sigma_eps = model.sigma0;
  model.rho_eps_v = model.rho0;
  model.sigma_eta_v = model.rho1 * model.sigma1 - model.rho0 * model.sigma0;
  const double eta_var = model.sigma1 * model.sigma1 - model.sigma0 * model.sigma0;
  if (eta_var > 0.0) {
    model.sigma_eta = std::sqrt(eta_var);
    model.rho_eta_v = std::clamp(model.sigma_eta_v / model.sigma_eta, -1.0, 1.0);
  } else {
    model.sigma_eta = 0.0;
    model.rho_eta_v = 0.0;
    model.eta_degenerate = true;
  }

  if (opts.compute_vcov) {
    // Observed information via central differences of the analytic gradient.
    Eigen::MatrixXd hess(pack.dim, pack.dim);
    Eigen::VectorXd gp(pack.dim), gm(pack.dim);
    Eigen::VectorXd xq = res.x;
    for (Eigen::Index j = 0; j < pack.dim; ++j) {
      const double h = 1e-5 * std::max(1.0, std::abs(res.x[j]));
      xq[j] = res.x[j] + h;
      obj.eval(xq, &gp);
      xq[j] = res.x[j] - h;
      obj.eval(xq, &gm);
      xq[j] = res.x[j];
      hess.col(j) = (gp - gm) / (2.0 * h);
    }
    hess = 0.5 * (hess + hess.transpose()).eval();
    Eigen::MatrixXd vcov =
        hess.ldlt().solve(Eigen::MatrixXd::Identity(pack.dim, pack.dim)) /
        static_cast<double>(n);

    model.beta_diff_se = Eigen::VectorXd::Zero(pack.dx1);
    for (std::size_t k = 0; k < pack.free_diff.size(); ++k) {
      const auto idx = pack.diff_at(static_cast<Eigen::Index>(k));
      model.beta_diff_se[pack.free_diff[k]] = std::sqrt(std::max(0.0, vcov(idx, idx)));
    }
    if (pack.est_rho) {
      model.rho0_se = (1.0 - model.rho0 * model.rho0) *
                      std::sqrt(std::max(0.0, vcov(pack.tr0(), pack.tr0())));
      model.rho1_se = (1.0 - model.rho1 * model.rho1) *
                      std::sqrt(std::max(0.0, vcov(pack.tr1(), pack.tr1())));
      // Delta method for sigma_eta_v = tanh(tr1) e^{ts1} - tanh(tr0) e^{ts0}.
      Eigen::VectorXd grad_s = Eigen::VectorXd::Zero(pack.dim);
      grad_s[pack.ts0()] = -model.rho0 * model.sigma0;
      grad_s[pack.ts1()] = model.rho1 * model.sigma1;
      grad_s[pack.tr0()] = -(1.0 - model.rho0 * model.rho0) * model.sigma0;
      grad_s[pack.tr1()] = (1.0 - model.rho1 * model.rho1) * model.sigma1;
      model.sigma_eta_v_se = std::sqrt(std::max(0.0, grad_s.dot(vcov * grad_s)));
    }
  }
  return model;
}

}  // namespace mie
