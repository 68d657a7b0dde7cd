#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>

#include "mie/error.hpp"
#include "mie/math.hpp"

namespace mie {

struct LinearModel {
  Eigen::VectorXd coefficients;
  double residual_variance = 0.0;

  Eigen::VectorXd predict(const Eigen::MatrixXd& design) const {
    return design * coefficients;
  }
};

// Least squares via column-pivoted QR; rank deficiency is reported with the
// offending column rather than silently regularized.
inline LinearModel fit_ols(const Eigen::MatrixXd& design, const Eigen::VectorXd& response) {
  if (design.rows() != response.size())
    throw domain_error("fit_ols: design rows != response length");
  if (design.rows() < design.cols())
    throw rank_error("fit_ols: fewer rows than columns");
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  qr.setThreshold(1e-10);
  if (qr.rank() < design.cols()) {
    // Columns pivoted past the numerical rank are the dependent ones.
    const auto perm = qr.colsPermutation().indices();
    const int dependent = perm[qr.rank()];
    throw rank_error("fit_ols: design is rank-deficient; column " +
                     std::to_string(dependent) + " is linearly dependent");
  }
  LinearModel m;
  m.coefficients = qr.solve(response);
  const Eigen::VectorXd resid = response - design * m.coefficients;
  const auto dof = design.rows() - design.cols();
  m.residual_variance = dof > 0 ? resid.squaredNorm() / static_cast<double>(dof) : 0.0;
  return m;
}

struct LogisticModel {
  Eigen::VectorXd coefficients;
  bool converged = false;
  int n_iterations = 0;
  bool ridged = false;  // Gram matrix needed the 1e-10 diagonal fallback

  Eigen::VectorXd predict_prob(const Eigen::MatrixXd& design) const {
    Eigen::VectorXd eta = design * coefficients;
    for (Eigen::Index i = 0; i < eta.size(); ++i) eta[i] = expit(eta[i]);
    return eta;
  }
};

namespace detail {

// Shared IRLS core. `require_binary` enables the class-balance precondition
// and complete-separation detection; the quasi-likelihood path (fractional
// responses in [0,1]) skips both.
inline LogisticModel irls_core(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                               int max_iter, double tol, bool require_binary) {
  const auto n = design.rows();
  const auto d = design.cols();
  if (n != response.size()) throw domain_error("logistic fit: design rows != labels length");
  if (require_binary) {
    int ones = 0, zeros = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (response[i] == 1.0)
        ++ones;
      else if (response[i] == 0.0)
        ++zeros;
      else
        throw domain_error("logistic fit: label at row " + std::to_string(i) +
                           " is not 0/1");
    }
    if (ones == 0 || zeros == 0)
      throw separation_error("logistic fit: labels contain a single class");
  } else {
    for (Eigen::Index i = 0; i < n; ++i)
      if (!(response[i] >= 0.0 && response[i] <= 1.0))
        throw domain_error("quasi-logistic fit: response at row " + std::to_string(i) +
                           " outside [0,1]");
  }

  LogisticModel m;
  m.coefficients = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd p(n), w(n);
  for (int iter = 1; iter <= max_iter; ++iter) {
    Eigen::VectorXd eta = design * m.coefficients;
    for (Eigen::Index i = 0; i < n; ++i) {
      p[i] = expit(eta[i]);
      w[i] = std::max(p[i] * (1.0 - p[i]), 1e-12);
    }
    const Eigen::MatrixXd gram = design.transpose() * w.asDiagonal() * design;
    const Eigen::VectorXd score = design.transpose() * (response - p);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
    Eigen::VectorXd step;
    bool usable = ldlt.info() == Eigen::Success && ldlt.isPositive() &&
                  ldlt.vectorD().minCoeff() > 1e-12 * ldlt.vectorD().maxCoeff();
    if (usable) {
      step = ldlt.solve(score);
      usable = step.allFinite();
    }
    if (!usable) {
      // Singular weighted Gram matrix: ridge fallback keeps bootstrap
      // replicates from aborting; flagged so diagnostics can report it.
      Eigen::MatrixXd ridged = gram;
      ridged.diagonal().array() += 1e-10;
      step = Eigen::LDLT<Eigen::MatrixXd>(ridged).solve(score);
      m.ridged = true;
      if (!step.allFinite()) throw rank_error("logistic fit: singular system");
    }
    m.coefficients += step;
    m.n_iterations = iter;

    double rel_change = 0.0;
    for (Eigen::Index j = 0; j < d; ++j)
      rel_change = std::max(rel_change,
                            std::abs(step[j]) / std::max(1.0, std::abs(m.coefficients[j])));
    if (rel_change < tol) {
      m.converged = true;
      break;
    }
    if (require_binary && m.coefficients.norm() > 50.0 && step.norm() > 0.1) {
      Eigen::VectorXd probs = m.predict_prob(design);
      bool all_pinned = true;
      for (Eigen::Index i = 0; i < n; ++i)
        if (probs[i] >= 1e-10 && probs[i] <= 1.0 - 1e-10) {
          all_pinned = false;
          break;
        }
      if (all_pinned)
        throw separation_error(
            "logistic fit: complete separation (all fitted probabilities pinned, "
            "diverging step norm)");
    }
  }
  return m;
}

}  // namespace detail

// IRLS logistic regression for 0/1 labels. Non-convergence is reported via
// converged=false with the last iterate; complete separation throws.
inline LogisticModel fit_logistic_irls(const Eigen::MatrixXd& design,
                                       const Eigen::VectorXd& labels, int max_iter = 100,
                                       double tol = 1e-8) {
  return detail::irls_core(design, labels, max_iter, tol, /*require_binary=*/true);
}

// Quasi-likelihood variant for fractional responses in [0,1] (logistic-link
// mean model); used by the location-shift density fit.
inline LogisticModel fit_logistic_quasi(const Eigen::MatrixXd& design,
                                        const Eigen::VectorXd& response, int max_iter = 100,
                                        double tol = 1e-8) {
  return detail::irls_core(design, response, max_iter, tol, /*require_binary=*/false);
}

// Local polynomial regression with a Gaussian kernel. Training data is
// retained; evaluation solves the locally weighted least-squares fit at each
// query point. Degree-2 fits supply the first-derivative coefficient.
struct LocalPolyFit {
  int degree = 1;  // 1 or 2
  double bandwidth = 0.0;
  Eigen::VectorXd inputs;
  Eigen::VectorXd outputs;
};

inline LocalPolyFit fit_local_poly(const Eigen::VectorXd& inputs,
                                   const Eigen::VectorXd& outputs, int degree,
                                   double bandwidth = 0.0) {
  if (degree != 1 && degree != 2) throw domain_error("local polynomial degree must be 1 or 2");
  if (inputs.size() != outputs.size())
    throw domain_error("local polynomial: input/output length mismatch");
  if (inputs.size() < degree + 1)
    throw sample_error("local polynomial: need at least degree+1 training points");
  LocalPolyFit f;
  f.degree = degree;
  f.bandwidth = bandwidth > 0.0 ? bandwidth : silverman_bandwidth(inputs);
  f.inputs = inputs;
  f.outputs = outputs;
  return f;
}

struct LocalPolyEval {
  Eigen::VectorXd values;
  Eigen::VectorXd derivatives;
};

inline LocalPolyEval local_poly_eval(const LocalPolyFit& fit, const Eigen::VectorXd& points) {
  if (!(fit.bandwidth > 0.0)) throw domain_error("local polynomial: bandwidth must be > 0");
  const auto n = fit.inputs.size();
  const int q = fit.degree + 1;
  LocalPolyEval out;
  out.values.resize(points.size());
  out.derivatives.resize(points.size());

  // Powers are taken in t = (x - p)/h so the small normal-equation system is
  // well conditioned; coefficient k then corresponds to b_k h^k.
  Eigen::ArrayXd t(n), w(n);
  for (Eigen::Index k = 0; k < points.size(); ++k) {
    const double p = points[k];
    t = (fit.inputs.array() - p) / fit.bandwidth;
    w = (-0.5 * t.square()).exp();

    // Count distinct training inputs with nonvanishing kernel weight.
    int usable = 0;
    std::array<double, 3> seen{};
    for (Eigen::Index i = 0; i < n && usable < q; ++i) {
      if (w[i] <= 1e-300) continue;
      bool dup = false;
      for (int s = 0; s < usable; ++s)
        if (seen[s] == fit.inputs[i]) {
          dup = true;
          break;
        }
      if (!dup) seen[usable++] = fit.inputs[i];
    }
    if (usable < q)
      throw sample_error("local polynomial: fewer than degree+1 usable points near " +
                         std::to_string(p));

    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(q, q);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(q);
    // Moments S_m = sum w t^m up to 2*degree fill the Gram matrix.
    Eigen::ArrayXd tm = Eigen::ArrayXd::Ones(n);
    std::array<double, 5> moments{};
    std::array<double, 3> cross{};
    for (int m = 0; m <= 2 * fit.degree; ++m) {
      moments[m] = (w * tm).sum();
      if (m <= fit.degree) cross[m] = (w * tm * fit.outputs.array()).sum();
      tm *= t;
    }
    for (int r = 0; r < q; ++r) {
      rhs[r] = cross[r];
      for (int c = 0; c < q; ++c) gram(r, c) = moments[r + c];
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
    Eigen::VectorXd beta = ldlt.solve(rhs);
    if (ldlt.info() != Eigen::Success || !beta.allFinite())
      throw sample_error("local polynomial: singular local system at " + std::to_string(p));
    out.values[k] = beta[0];
    out.derivatives[k] = beta[1] / fit.bandwidth;
  }
  return out;
}

struct KernelDensityModel {
  Eigen::VectorXd sample;
  double bandwidth = 0.0;
};

inline KernelDensityModel fit_kernel_density(const Eigen::VectorXd& sample,
                                             double bandwidth = 0.0) {
  if (sample.size() < 2) throw sample_error("kernel density: need at least 2 points");
  KernelDensityModel m;
  m.sample = sample;
  m.bandwidth = bandwidth > 0.0 ? bandwidth : silverman_bandwidth(sample);
  return m;
}

// Gaussian kernel density and its analytic derivative at each point.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> kernel_density_derivative(
    const KernelDensityModel& model, const Eigen::VectorXd& points) {
  if (!(model.bandwidth > 0.0)) throw domain_error("kernel density: bandwidth must be > 0");
  const double h = model.bandwidth;
  const auto n = static_cast<double>(model.sample.size());
  Eigen::VectorXd phi(points.size()), phi_prime(points.size());
  for (Eigen::Index k = 0; k < points.size(); ++k) {
    const Eigen::ArrayXd u = (points[k] - model.sample.array()) / h;
    const Eigen::ArrayXd kern = kInvSqrt2Pi * (-0.5 * u.square()).exp();
    phi[k] = kern.sum() / (n * h);
    phi_prime[k] = (-u * kern).sum() / (n * h * h);
  }
  return {phi, phi_prime};
}

}  // namespace mie
