#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mie/dataset.hpp"
#include "mie/error.hpp"
#include "mie/inference.hpp"
#include "mie/interventions.hpp"
#include "mie/learners.hpp"
#include "mie/math.hpp"

namespace mie {

// Table-1 rows: each stylized family's MIE weight coincides with a familiar
// weighting estimand.
enum class WeightScheme { ATE, ATT, ATU, ATO };

inline WeightScheme scheme_for_family(const InterventionFamily& family) {
  switch (family.kind()) {
    case InterventionFamily::Kind::Additive:
      return WeightScheme::ATE;
    case InterventionFamily::Kind::Multiplicative:
      return WeightScheme::ATT;
    case InterventionFamily::Kind::Equalizing:
      return WeightScheme::ATU;
    case InterventionFamily::Kind::Ipsi:
      return WeightScheme::ATO;
    default:
      throw domain_error("no weighting scheme for family " + family.name());
  }
}

inline std::string scheme_name(WeightScheme s) {
  switch (s) {
    case WeightScheme::ATE: return "ate";
    case WeightScheme::ATT: return "att";
    case WeightScheme::ATU: return "atu";
    case WeightScheme::ATO: return "ato";
  }
  return "?";
}

enum class OutcomeModelKind { Auto, Linear, Logistic };

struct UnconfoundedOptions {
  OutcomeModelKind outcome_model = OutcomeModelKind::Auto;
  // Pooled: one outcome regression on [1, X, A] (treatment main effect only),
  // the specification used for the RHC runs. Default is a separate model per
  // arm, which leaves treatment effect heterogeneity unrestricted.
  bool pooled_outcome = false;
  double prob_floor = 1e-6;
  int logistic_max_iter = 100;
  double logistic_tol = 1e-8;
};

namespace detail {

inline bool outcome_is_binary(const Eigen::VectorXd& y) {
  for (Eigen::Index i = 0; i < y.size(); ++i)
    if (y[i] != 0.0 && y[i] != 1.0) return false;
  return true;
}

inline bool use_logistic_outcome(const Eigen::VectorXd& y, OutcomeModelKind kind) {
  switch (kind) {
    case OutcomeModelKind::Linear: return false;
    case OutcomeModelKind::Logistic: return true;
    case OutcomeModelKind::Auto: return outcome_is_binary(y);
  }
  return false;
}

struct OutcomeModel {
  bool logistic = false;
  LinearModel linear;
  LogisticModel logit;

  Eigen::VectorXd predict(const Eigen::MatrixXd& design) const {
    return logistic ? logit.predict_prob(design) : linear.predict(design);
  }
};

inline OutcomeModel fit_outcome(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                                bool logistic, const UnconfoundedOptions& opts) {
  OutcomeModel m;
  m.logistic = logistic;
  if (logistic)
    m.logit = fit_logistic_irls(design, y, opts.logistic_max_iter, opts.logistic_tol);
  else
    m.linear = fit_ols(design, y);
  return m;
}

inline std::vector<int> arm_rows(const Eigen::VectorXd& a, double arm) {
  std::vector<int> rows;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    if (a[i] == arm) rows.push_back(static_cast<int>(i));
  return rows;
}

inline Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& m, const std::vector<int>& rows) {
  Eigen::MatrixXd out(rows.size(), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(i) = m.row(rows[i]);
  return out;
}

inline Eigen::VectorXd gather(const Eigen::VectorXd& v, const std::vector<int>& rows) {
  Eigen::VectorXd out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out[i] = v[rows[i]];
  return out;
}

}  // namespace detail

// Everything the plug-in estimators need: the fitted propensity (floored away
// from 0/1, with clip counts) and the per-row outcome-mean imputations.
struct UnconfoundedFit {
  LogisticModel propensity;
  bool pooled = false;
  detail::OutcomeModel outcome_treated;
  detail::OutcomeModel outcome_control;
  detail::OutcomeModel outcome_pooled;
  Eigen::VectorXd fitted_p0;
  Eigen::VectorXd mu1;
  Eigen::VectorXd mu0;
  int clipped_low = 0;
  int clipped_high = 0;
  std::optional<std::pair<double, double>> trimming_bounds;
};

inline UnconfoundedFit fit_unconfounded(const Dataset& data,
                                        const UnconfoundedOptions& opts = {}) {
  require_valid(data);
  UnconfoundedFit fit;
  const Eigen::MatrixXd design = with_intercept(data.x);
  fit.propensity =
      fit_logistic_irls(design, data.a, opts.logistic_max_iter, opts.logistic_tol);
  fit.fitted_p0 = fit.propensity.predict_prob(design);
  for (Eigen::Index i = 0; i < fit.fitted_p0.size(); ++i) {
    if (fit.fitted_p0[i] < opts.prob_floor) {
      fit.fitted_p0[i] = opts.prob_floor;
      ++fit.clipped_low;
    } else if (fit.fitted_p0[i] > 1.0 - opts.prob_floor) {
      fit.fitted_p0[i] = 1.0 - opts.prob_floor;
      ++fit.clipped_high;
    }
  }

  const bool logistic = detail::use_logistic_outcome(data.y, opts.outcome_model);
  fit.pooled = opts.pooled_outcome;
  if (opts.pooled_outcome) {
    Eigen::MatrixXd pooled(design.rows(), design.cols() + 1);
    pooled.leftCols(design.cols()) = design;
    pooled.col(design.cols()) = data.a;
    fit.outcome_pooled = detail::fit_outcome(pooled, data.y, logistic, opts);
    Eigen::MatrixXd at1 = pooled, at0 = pooled;
    at1.col(design.cols()).setOnes();
    at0.col(design.cols()).setZero();
    fit.mu1 = fit.outcome_pooled.predict(at1);
    fit.mu0 = fit.outcome_pooled.predict(at0);
  } else {
    const auto treated = detail::arm_rows(data.a, 1.0);
    const auto controls = detail::arm_rows(data.a, 0.0);
    fit.outcome_treated = detail::fit_outcome(detail::gather_rows(design, treated),
                                              detail::gather(data.y, treated), logistic, opts);
    fit.outcome_control = detail::fit_outcome(detail::gather_rows(design, controls),
                                              detail::gather(data.y, controls), logistic, opts);
    fit.mu1 = fit.outcome_treated.predict(design);
    fit.mu0 = fit.outcome_control.predict(design);
  }
  return fit;
}

namespace detail {

inline void common_diagnostics(EstimateReport& r, const UnconfoundedFit& fit) {
  r.diagnostics["min_fitted_propensity"] = fit.fitted_p0.minCoeff();
  r.diagnostics["max_fitted_propensity"] = fit.fitted_p0.maxCoeff();
  r.diagnostics["clipped_low"] = fit.clipped_low;
  r.diagnostics["clipped_high"] = fit.clipped_high;
}

}  // namespace detail

// Regression-imputation estimator of MIE:
//   sum_i lambda(p0_i) (mu1_i - mu0_i) / sum_i lambda(p0_i).
// With the IPSI family this is the overlap-weights RI form of ATO.
inline EstimateReport estimate_mie_ri(const Dataset& data, const InterventionFamily& family,
                                      const UnconfoundedOptions& opts = {}) {
  const UnconfoundedFit fit = fit_unconfounded(data, opts);
  const auto n = data.n();
  double num = 0.0, den = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double lam = family.lambda(fit.fitted_p0[i]);
    num += lam * (fit.mu1[i] - fit.mu0[i]);
    den += lam;
  }
  if (std::abs(den) < 1e-10 * static_cast<double>(n))
    throw degenerate_error("estimate_mie_ri: intervention weights are degenerate");
  EstimateReport r;
  r.estimand = EstimandKind::mie(Regime::Unconfounded, family.name()).label();
  r.method = "ri";
  r.point = num / den;
  r.n_used = n;
  detail::common_diagnostics(r, fit);
  return r;
}

// Plug-in IE estimator: weights are the fitted propensity increments
// pi_delta(p0_i) - p0_i.
inline EstimateReport estimate_ie(const Dataset& data, const InterventionFamily& family,
                                  double delta, const UnconfoundedOptions& opts = {}) {
  if (!(delta > 0.0)) throw domain_error("estimate_ie: delta must be > 0");
  const UnconfoundedFit fit = fit_unconfounded(data, opts);
  const auto n = data.n();
  double num = 0.0, den = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double w = family.pi_delta(fit.fitted_p0[i], delta) - fit.fitted_p0[i];
    num += w * (fit.mu1[i] - fit.mu0[i]);
    den += w;
  }
  if (std::abs(den) < 1e-10 * static_cast<double>(n))
    throw degenerate_error("estimate_ie: propensity increments are degenerate");
  EstimateReport r;
  r.estimand = EstimandKind::ie(Regime::Unconfounded, family.name(), delta).label();
  r.method = "ie-plugin";
  r.point = num / den;
  r.n_used = n;
  detail::common_diagnostics(r, fit);
  return r;
}

// Hajek-normalized weighting estimator. ATO uses weights (1 - p0) on treated
// and p0 on controls; ATE/ATT/ATU use the standard inverse-probability forms.
inline EstimateReport estimate_ipw(const Dataset& data, WeightScheme scheme,
                                   const UnconfoundedOptions& opts = {}) {
  const UnconfoundedFit fit = fit_unconfounded(data, opts);
  const auto n = data.n();
  Eigen::VectorXd w(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double p = fit.fitted_p0[i];
    const bool treated = data.a[i] == 1.0;
    switch (scheme) {
      case WeightScheme::ATE: w[i] = treated ? 1.0 / p : 1.0 / (1.0 - p); break;
      case WeightScheme::ATT: w[i] = treated ? 1.0 : p / (1.0 - p); break;
      case WeightScheme::ATU: w[i] = treated ? (1.0 - p) / p : 1.0; break;
      case WeightScheme::ATO: w[i] = treated ? 1.0 - p : p; break;
    }
  }
  double sw1 = 0, swy1 = 0, sw0 = 0, swy0 = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (data.a[i] == 1.0) {
      sw1 += w[i];
      swy1 += w[i] * data.y[i];
    } else {
      sw0 += w[i];
      swy0 += w[i] * data.y[i];
    }
  }
  if (sw1 <= 0.0 || sw0 <= 0.0)
    throw degenerate_error("estimate_ipw: an arm has zero total weight");

  EstimateReport r;
  const char* family_label[] = {"additive", "multiplicative", "equalizing", "ipsi"};
  r.estimand = EstimandKind::mie(Regime::Unconfounded,
                                 family_label[static_cast<int>(scheme)]).label();
  r.method = "ipw-" + scheme_name(scheme);
  r.point = swy1 / sw1 - swy0 / sw0;
  r.n_used = n;
  detail::common_diagnostics(r, fit);
  double max_norm_w = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    max_norm_w = std::max(max_norm_w, w[i] / (data.a[i] == 1.0 ? sw1 : sw0));
  r.diagnostics["max_normalized_weight"] = max_norm_w;
  if (max_norm_w > 0.1) r.diagnostics["extreme_weight_warning"] = 1.0;
  return r;
}

// Cross-fitted nuisance means E[Y|X] and E[A|X]; folds <= 1 disables
// cross-fitting (in-sample predictions).
namespace detail {

struct PartialledOut {
  Eigen::VectorXd resid_y;
  Eigen::VectorXd resid_a;
};

inline PartialledOut crossfit_partial_out(const Dataset& data, int folds, std::uint64_t seed,
                                          const UnconfoundedOptions& opts) {
  const auto n = data.n();
  const Eigen::MatrixXd design = with_intercept(data.x);
  const bool logistic_y = use_logistic_outcome(data.y, opts.outcome_model);
  PartialledOut out;
  out.resid_y.resize(n);
  out.resid_a.resize(n);
  if (folds <= 1) {
    const OutcomeModel my = fit_outcome(design, data.y, logistic_y, opts);
    const LogisticModel ma =
        fit_logistic_irls(design, data.a, opts.logistic_max_iter, opts.logistic_tol);
    out.resid_y = data.y - my.predict(design);
    out.resid_a = data.a - ma.predict_prob(design);
    return out;
  }
  FoldPlan plan = make_folds(static_cast<int>(n), FoldPlan{folds, seed, {}});
  for (int f = 0; f < folds; ++f) {
    std::vector<int> train, test;
    for (Eigen::Index i = 0; i < n; ++i)
      (plan.assignment[i] == f ? test : train).push_back(static_cast<int>(i));
    const Eigen::MatrixXd dtr = gather_rows(design, train);
    const OutcomeModel my = fit_outcome(dtr, gather(data.y, train), logistic_y, opts);
    const LogisticModel ma = fit_logistic_irls(dtr, gather(data.a, train),
                                               opts.logistic_max_iter, opts.logistic_tol);
    const Eigen::MatrixXd dte = gather_rows(design, test);
    const Eigen::VectorXd py = my.predict(dte);
    const Eigen::VectorXd pa = ma.predict_prob(dte);
    for (std::size_t k = 0; k < test.size(); ++k) {
      out.resid_y[test[k]] = data.y[test[k]] - py[k];
      out.resid_a[test[k]] = data.a[test[k]] - pa[k];
    }
  }
  return out;
}

}  // namespace detail

// Robinson partialing-out estimator of MIE under the IPSI:
//   sum_i (Y_i - E[Y|X_i])(A_i - E[A|X_i]) / sum_i (A_i - E[A|X_i])^2,
// with cross-fitted nuisances and standard errors from the empirical variance
// of its estimated EIF.
inline EstimateReport estimate_robinson(const Dataset& data, int crossfit_folds = 5,
                                        std::uint64_t fold_seed = 0,
                                        const UnconfoundedOptions& opts = {}) {
  require_valid(data);
  const auto n = data.n();
  const auto res = detail::crossfit_partial_out(data, crossfit_folds, fold_seed, opts);
  const double den = res.resid_a.squaredNorm();
  if (den < 1e-10)
    throw degenerate_error("estimate_robinson: residual treatment variation is zero");
  const double tau = res.resid_y.dot(res.resid_a) / den;

  const double var_a = den / static_cast<double>(n);
  Eigen::VectorXd scores(n);
  for (Eigen::Index i = 0; i < n; ++i)
    scores[i] = res.resid_a[i] * (res.resid_y[i] - tau * res.resid_a[i]) / var_a;

  EstimateReport r;
  r.estimand = EstimandKind::mie(Regime::Unconfounded, "ipsi").label();
  r.method = "robinson";
  r.point = tau;
  r.std_error = eif_variance(scores);
  r.n_used = n;
  r.diagnostics["crossfit_folds"] = crossfit_folds;
  return r;
}

// Augmented IPW with cross-fitting for the three extrapolating schemes. The
// ATT/ATU scores keep the propensity in the denominator of the opposite arm
// only.
inline EstimateReport estimate_aipw(const Dataset& data, WeightScheme scheme,
                                    int crossfit_folds = 5, std::uint64_t fold_seed = 0,
                                    const UnconfoundedOptions& opts = {}) {
  if (scheme == WeightScheme::ATO)
    throw domain_error("estimate_aipw: use estimate_robinson for the overlap estimand");
  require_valid(data);
  const auto n = data.n();
  const Eigen::MatrixXd design = with_intercept(data.x);
  const bool logistic_y = detail::use_logistic_outcome(data.y, opts.outcome_model);

  Eigen::VectorXd p0(n), mu1(n), mu0(n);
  int clipped = 0;
  auto fit_block = [&](const std::vector<int>& train, const std::vector<int>& test) {
    const Eigen::MatrixXd dtr = detail::gather_rows(design, train);
    const Eigen::VectorXd atr = detail::gather(data.a, train);
    const LogisticModel prop =
        fit_logistic_irls(dtr, atr, opts.logistic_max_iter, opts.logistic_tol);
    std::vector<int> treated, controls;
    for (int i : train) (data.a[i] == 1.0 ? treated : controls).push_back(i);
    const detail::OutcomeModel m1 =
        detail::fit_outcome(detail::gather_rows(design, treated),
                            detail::gather(data.y, treated), logistic_y, opts);
    const detail::OutcomeModel m0 =
        detail::fit_outcome(detail::gather_rows(design, controls),
                            detail::gather(data.y, controls), logistic_y, opts);
    const Eigen::MatrixXd dte = detail::gather_rows(design, test);
    const Eigen::VectorXd pp = prop.predict_prob(dte);
    const Eigen::VectorXd p1 = m1.predict(dte);
    const Eigen::VectorXd p00 = m0.predict(dte);
    for (std::size_t k = 0; k < test.size(); ++k) {
      double p = pp[k];
      if (p < opts.prob_floor || p > 1.0 - opts.prob_floor) {
        p = std::clamp(p, opts.prob_floor, 1.0 - opts.prob_floor);
        ++clipped;
      }
      p0[test[k]] = p;
      mu1[test[k]] = p1[k];
      mu0[test[k]] = p00[k];
    }
  };

  if (crossfit_folds <= 1) {
    std::vector<int> all(n);
    std::iota(all.begin(), all.end(), 0);
    fit_block(all, all);
  } else {
    FoldPlan plan = make_folds(static_cast<int>(n), FoldPlan{crossfit_folds, fold_seed, {}});
    for (int f = 0; f < crossfit_folds; ++f) {
      std::vector<int> train, test;
      for (Eigen::Index i = 0; i < n; ++i)
        (plan.assignment[i] == f ? test : train).push_back(static_cast<int>(i));
      fit_block(train, test);
    }
  }

  Eigen::VectorXd contrib(n);
  double tau = 0.0;
  Eigen::VectorXd scores(n);
  if (scheme == WeightScheme::ATE) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double a = data.a[i];
      contrib[i] = mu1[i] - mu0[i] + a * (data.y[i] - mu1[i]) / p0[i] -
                   (1.0 - a) * (data.y[i] - mu0[i]) / (1.0 - p0[i]);
    }
    tau = contrib.mean();
    scores = contrib.array() - tau;
  } else if (scheme == WeightScheme::ATT) {
    const double pbar = data.a.mean();
    for (Eigen::Index i = 0; i < n; ++i) {
      const double a = data.a[i];
      contrib[i] = a * (data.y[i] - mu0[i]) -
                   (1.0 - a) * (p0[i] / (1.0 - p0[i])) * (data.y[i] - mu0[i]);
    }
    tau = contrib.sum() / data.a.sum();
    for (Eigen::Index i = 0; i < n; ++i)
      scores[i] = (contrib[i] - data.a[i] * tau) / pbar;
  } else {  // ATU
    const double qbar = 1.0 - data.a.mean();
    for (Eigen::Index i = 0; i < n; ++i) {
      const double a = data.a[i];
      contrib[i] = (1.0 - a) * (mu1[i] - data.y[i]) +
                   a * ((1.0 - p0[i]) / p0[i]) * (data.y[i] - mu1[i]);
    }
    tau = contrib.sum() / (static_cast<double>(n) - data.a.sum());
    for (Eigen::Index i = 0; i < n; ++i)
      scores[i] = (contrib[i] - (1.0 - data.a[i]) * tau) / qbar;
  }

  EstimateReport r;
  const char* family_label[] = {"additive", "multiplicative", "equalizing", "ipsi"};
  r.estimand = EstimandKind::mie(Regime::Unconfounded,
                                 family_label[static_cast<int>(scheme)]).label();
  r.method = "aipw-" + scheme_name(scheme);
  r.point = tau;
  r.std_error = eif_variance(scores);
  r.n_used = n;
  r.diagnostics["crossfit_folds"] = crossfit_folds;
  r.diagnostics["clipped"] = clipped;
  r.diagnostics["min_fitted_propensity"] = p0.minCoeff();
  r.diagnostics["max_fitted_propensity"] = p0.maxCoeff();
  return r;
}

// Overlap trimming: keep rows whose fitted propensity lies in
// [min over treated, max over controls].
inline std::pair<Dataset, std::pair<double, double>> trim_by_propensity(
    const Dataset& data, const Eigen::VectorXd& fitted_p0) {
  if (fitted_p0.size() != data.n())
    throw domain_error("trim_by_propensity: propensity length mismatch");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    if (data.a[i] == 1.0) lo = std::min(lo, fitted_p0[i]);
    else hi = std::max(hi, fitted_p0[i]);
  }
  if (!(lo <= hi))
    throw degenerate_error("trim_by_propensity: empty overlap interval [" +
                           std::to_string(lo) + ", " + std::to_string(hi) + "]");
  std::vector<int> keep;
  for (Eigen::Index i = 0; i < data.n(); ++i)
    if (fitted_p0[i] >= lo && fitted_p0[i] <= hi) keep.push_back(static_cast<int>(i));
  if (keep.empty()) throw degenerate_error("trim_by_propensity: no rows inside the interval");
  return {data.subset(keep), {lo, hi}};
}

}  // namespace mie
