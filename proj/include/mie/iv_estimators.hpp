#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "mie/dataset.hpp"
#include "mie/error.hpp"
#include "mie/interventions.hpp"
#include "mie/learners.hpp"
#include "mie/math.hpp"
#include "mie/roy_model.hpp"
#include "mie/semiparametric.hpp"

namespace mie {

namespace detail {

inline std::pair<double, double> fit_support(const RoySwitchingModel&) { return {0.0, 1.0}; }
inline std::pair<double, double> fit_support(const SemiparamMTEFit& f) {
  return {f.support_lo, f.support_hi};
}

// Fitted propensities for every row of the dataset, clipped to the open unit
// interval so quantile transforms stay finite.
template <typename Fit>
Eigen::VectorXd fitted_propensities(const Fit& fit, const Dataset& data) {
  if (!data.z) throw domain_error("IV estimator: dataset has no instrument block");
  Eigen::VectorXd p(data.n());
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    const Eigen::VectorXd zi = data.z->row(i);
    p[i] = std::clamp(fit.propensity_at(zi), 1e-12, 1.0 - 1e-12);
  }
  return p;
}

}  // namespace detail

enum class DensityMode { Normal, Kernel };

// Location-shift model p0(Z) = E[p0(Z)|X] + eps with eps independent of X.
// The mean is a logistic-link quasi-likelihood regression of the fitted
// propensity on X; the density slope d log f(p|X) / dp is -eps/sigma^2 under
// the normal option, or the kernel estimate phi'/phi otherwise.
struct LocationShiftDensity {
  LogisticModel mean_model;  // over [1, X]
  Eigen::VectorXd residuals;
  double sigma_eps_hat = 0.0;
  DensityMode mode = DensityMode::Normal;
  KernelDensityModel kde;
  Eigen::VectorXd kernel_slopes;  // phi'/phi at each residual (Kernel mode)
  bool degenerate = false;

  double log_density_slope(Eigen::Index i) const {
    if (degenerate)
      throw degenerate_error("location-shift density is degenerate (sigma_eps < 1e-8)");
    if (mode == DensityMode::Normal)
      return -residuals[i] / (sigma_eps_hat * sigma_eps_hat);
    return kernel_slopes[i];
  }
};

inline LocationShiftDensity fit_location_shift(const Dataset& data,
                                               const Eigen::VectorXd& fitted_p0,
                                               DensityMode mode = DensityMode::Normal) {
  if (fitted_p0.size() != data.n())
    throw domain_error("fit_location_shift: propensity length mismatch");
  for (Eigen::Index i = 0; i < fitted_p0.size(); ++i)
    if (!(fitted_p0[i] > 0.0 && fitted_p0[i] < 1.0))
      throw domain_error("fit_location_shift: fitted propensity outside (0,1) at row " +
                         std::to_string(i));
  LocationShiftDensity d;
  d.mode = mode;
  const Eigen::MatrixXd design = with_intercept(data.x);
  d.mean_model = fit_logistic_quasi(design, fitted_p0);
  d.residuals = fitted_p0 - d.mean_model.predict_prob(design);
  const auto n = static_cast<double>(data.n());
  d.sigma_eps_hat = std::sqrt(d.residuals.squaredNorm() / n);
  if (d.sigma_eps_hat < 1e-8) {
    d.degenerate = true;  // no instrument variation beyond X
    return d;
  }
  if (mode == DensityMode::Kernel) {
    d.kde = fit_kernel_density(d.residuals);
    const auto [phi, phi_prime] = kernel_density_derivative(d.kde, d.residuals);
    d.kernel_slopes.resize(d.residuals.size());
    for (Eigen::Index i = 0; i < d.residuals.size(); ++i) {
      if (!(phi[i] > 1e-300))
        throw degenerate_error("location-shift kernel density vanished at a residual");
      d.kernel_slopes[i] = phi_prime[i] / phi[i];
    }
  }
  return d;
}

// Plug-in MIE: (1/n) sum_i [lambda(p_i)/mean(lambda)] MTE(X_i, p_i) with the
// fitted MTE evaluated at u = p-hat(Z_i).
template <typename Fit>
EstimateReport estimate_mie_plugin(const Fit& fit, const Dataset& data,
                                   const InterventionFamily& family) {
  require_valid(data);
  const Eigen::VectorXd p = detail::fitted_propensities(fit, data);
  const auto n = data.n();
  double num = 0.0, den = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double lam = family.lambda(p[i]);
    const Eigen::VectorXd xi = data.x.row(i);
    num += lam * fit.mte_at(xi, p[i]);
    den += lam;
  }
  if (std::abs(den) < 1e-10 * static_cast<double>(n))
    throw degenerate_error("estimate_mie_plugin: intervention weights are degenerate");
  EstimateReport r;
  r.estimand = EstimandKind::mie(Regime::IvLatentIndex, family.name()).label();
  r.method = std::string("plugin-") + Fit::kind_name;
  r.point = num / den;
  r.n_used = n;
  r.diagnostics["min_fitted_propensity"] = p.minCoeff();
  r.diagnostics["max_fitted_propensity"] = p.maxCoeff();
  return r;
}

// IE via the MTE representation:
//   E[ integral_{p0}^{pi_delta} MTE(X,u) du ] / E[pi_delta - p0].
// Each row's integral runs over [p_i, pi_delta(p_i)] with adaptive
// Gauss-Legendre panels; rows whose interval leaves the fitted support are an
// identification failure and raise a support error naming them.
template <typename Fit>
EstimateReport estimate_ie_mte(const Fit& fit, const Dataset& data,
                               const InterventionFamily& family, double delta) {
  if (!(delta > 0.0)) throw domain_error("estimate_ie_mte: delta must be > 0");
  require_valid(data);
  const Eigen::VectorXd p = detail::fitted_propensities(fit, data);
  const auto [lo, hi] = detail::fit_support(fit);
  const auto n = data.n();

  std::vector<int> outside;
  Eigen::VectorXd upper(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    upper[i] = family.pi_delta(p[i], delta);
    if (Fit::strict_support && (p[i] < lo - 1e-12 || upper[i] > hi + 1e-12))
      outside.push_back(static_cast<int>(i));
  }
  if (!outside.empty()) {
    std::string rows;
    for (std::size_t k = 0; k < std::min<std::size_t>(outside.size(), 8); ++k)
      rows += (k ? "," : "") + std::to_string(outside[k]);
    throw support_error("estimate_ie_mte: integration interval exits supp(p-hat(Z)) for " +
                        std::to_string(outside.size()) + " rows (" + rows +
                        (outside.size() > 8 ? ",..." : "") + ")");
  }

  double num = 0.0, den = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::VectorXd xi = data.x.row(i);
    // The normal model is evaluable on all of (0,1); cap the upper limit just
    // inside 1 where pi_delta hits the boundary (the truncated tail of
    // Phi^{-1} contributes less than the quadrature tolerance).
    const double b = Fit::strict_support ? upper[i] : std::min(upper[i], 1.0 - 1e-12);
    num += integrate([&](double u) { return fit.mte_at(xi, u); }, p[i], b, 1e-8);
    den += upper[i] - p[i];
  }
  if (std::abs(den) < 1e-10 * static_cast<double>(n))
    throw degenerate_error("estimate_ie_mte: propensity increments are degenerate");
  EstimateReport r;
  r.estimand = EstimandKind::ie(Regime::IvLatentIndex, family.name(), delta).label();
  r.method = std::string("ie-") + Fit::kind_name;
  r.point = num / den;
  r.n_used = n;
  return r;
}

// Doubly robust MIE from the EIF of weighted average derivatives:
//   (1/n) sum_i { w_i dm/dp(X_i,p_i) + l_i (Y_i - m(X_i,p_i)) },
//   w_i = lambda(p_i)/mean(lambda),
//   l_i = -lambda'(p_i)/mean(lambda) - w_i dlogf(p_i|X_i)/dp.
// dm/dp is the fitted MTE itself (the local-IV identity), so no second
// smoothing pass is involved.
template <typename Fit>
EstimateReport estimate_mie_doubly_robust(const Dataset& data,
                                          const InterventionFamily& family, const Fit& fit,
                                          const LocationShiftDensity& density) {
  require_valid(data);
  if (density.degenerate)
    throw degenerate_error("estimate_mie_doubly_robust: degenerate location-shift density");
  const Eigen::VectorXd p = detail::fitted_propensities(fit, data);
  const auto n = data.n();
  if (density.residuals.size() != n)
    throw domain_error("estimate_mie_doubly_robust: density fitted on different data");

  double lam_sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) lam_sum += family.lambda(p[i]);
  const double lam_mean = lam_sum / static_cast<double>(n);
  if (std::abs(lam_mean) < 1e-10)
    throw degenerate_error("estimate_mie_doubly_robust: intervention weights are degenerate");

  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::VectorXd xi = data.x.row(i);
    const double w = family.lambda(p[i]) / lam_mean;
    const double correction_weight =
        -family.lambda_prime(p[i]) / lam_mean - w * density.log_density_slope(i);
    acc += w * fit.mte_at(xi, p[i]) +
           correction_weight * (data.y[i] - fit.outcome_mean_at(xi, p[i]));
  }
  EstimateReport r;
  r.estimand = EstimandKind::mie(Regime::IvLatentIndex, family.name()).label();
  r.method = std::string("dr-") + Fit::kind_name;
  r.point = acc / static_cast<double>(n);
  r.n_used = n;
  r.diagnostics["sigma_eps_hat"] = density.sigma_eps_hat;
  return r;
}

}  // namespace mie
