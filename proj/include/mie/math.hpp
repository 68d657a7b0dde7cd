#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "mie/error.hpp"

namespace mie {

inline constexpr double kSqrt2 = 1.4142135623730951;
inline constexpr double kInvSqrt2Pi = 0.3989422804014327;

inline double normal_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / kSqrt2); }

// Inverse standard normal CDF, Wichura's AS241 (PPND16). Relative accuracy
// around 1e-15 on (0,1).
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw domain_error("normal_quantile requires p in (0,1)");
  const double q = p - 0.5;
  if (std::abs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q *
           (((((((2.5090809287301226727e+3 * r + 3.3430575583588128105e+4) * r +
                 6.7265770927008700853e+4) * r + 4.5921953931549871457e+4) * r +
               1.3731693765509461125e+4) * r + 1.9715909503065514427e+3) * r +
             1.3314166789178437745e+2) * r + 3.3871328727963666080e+0) /
           (((((((5.2264952788528545610e+3 * r + 2.8729085735721942674e+4) * r +
                 3.9307895800092710610e+4) * r + 2.1213794301586595867e+4) * r +
               5.3941960214247511077e+3) * r + 6.8718700749205790830e+2) * r +
             4.2313330701600911252e+1) * r + 1.0);
  }
  double r = (q < 0.0) ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double v;
  if (r <= 5.0) {
    r -= 1.6;
    v = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
              2.41780725177450611770e-1) * r + 1.27045825245236838258e+0) * r +
            3.64784832476320460504e+0) * r + 5.76949722146069140550e+0) * r +
          4.63033784615654529590e+0) * r + 1.42343711074968357734e+0) /
        (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
              1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
            6.89767334985100004550e-1) * r + 1.67638483018380384940e+0) * r +
          2.05319162663775882187e+0) * r + 1.0);
  } else {
    r -= 5.0;
    v = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
              1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
            2.96560571828504891230e-1) * r + 1.78482653991729133580e+0) * r +
          5.46378491116411436990e+0) * r + 6.65790464350110377720e+0) /
        (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
              1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
            1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
          5.99832206555887937690e-1) * r + 1.0);
  }
  return (q < 0.0) ? -v : v;
}

inline double expit(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) {
  if (!(p > 0.0 && p < 1.0)) throw domain_error("logit requires p in (0,1)");
  return std::log(p / (1.0 - p));
}

struct QuadratureRule {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;
};

namespace detail {

// Golub-Welsch: nodes/weights from the symmetric tridiagonal Jacobi matrix.
inline QuadratureRule golub_welsch(const Eigen::VectorXd& diag, const Eigen::VectorXd& subdiag,
                                   double total_mass) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
  es.computeFromTridiagonal(diag, subdiag, Eigen::ComputeEigenvectors);
  if (es.info() != Eigen::Success) throw Error("numeric", "quadrature eigensolve failed");
  QuadratureRule rule;
  rule.nodes = es.eigenvalues();
  rule.weights.resize(diag.size());
  for (int i = 0; i < diag.size(); ++i) {
    const double v0 = es.eigenvectors()(0, i);
    rule.weights[i] = total_mass * v0 * v0;
  }
  return rule;
}

}  // namespace detail

// Gauss-Legendre on [-1,1].
inline QuadratureRule gauss_legendre(int order) {
  if (order < 1) throw domain_error("gauss_legendre order must be >= 1");
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(order);
  Eigen::VectorXd sub(order > 1 ? order - 1 : 0);
  for (int k = 1; k < order; ++k) sub[k - 1] = k / std::sqrt(4.0 * k * k - 1.0);
  return detail::golub_welsch(diag, sub, 2.0);
}

// Gauss-Hermite for the N(0,1) probability measure: sum w_i f(x_i) ~ E[f(X)].
inline QuadratureRule gauss_hermite_prob(int order) {
  if (order < 1) throw domain_error("gauss_hermite order must be >= 1");
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(order);
  Eigen::VectorXd sub(order > 1 ? order - 1 : 0);
  for (int k = 1; k < order; ++k) sub[k - 1] = std::sqrt(static_cast<double>(k));
  return detail::golub_welsch(diag, sub, 1.0);
}

namespace detail {

inline const QuadratureRule& gl15() {
  static const QuadratureRule rule = gauss_legendre(15);
  return rule;
}

inline double gl15_panel(const std::function<double(double)>& f, double a, double b) {
  const QuadratureRule& r = gl15();
  const double c = 0.5 * (a + b), h = 0.5 * (b - a);
  double s = 0.0;
  for (int i = 0; i < 15; ++i) s += r.weights[i] * f(c + h * r.nodes[i]);
  return s * h;
}

inline double adapt_gl(const std::function<double(double)>& f, double a, double b, double whole,
                       double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double left = gl15_panel(f, a, m);
  const double right = gl15_panel(f, m, b);
  if (std::abs(left + right - whole) <= tol || depth >= 24) return left + right;
  return adapt_gl(f, a, m, left, 0.5 * tol, depth + 1) +
         adapt_gl(f, m, b, right, 0.5 * tol, depth + 1);
}

}  // namespace detail

// Adaptive Gauss-Legendre with 15-point panels, absolute tolerance.
inline double integrate(const std::function<double(double)>& f, double a, double b,
                        double abs_tol = 1e-8) {
  if (a == b) return 0.0;
  const double sign = (a < b) ? 1.0 : -1.0;
  const double lo = std::min(a, b), hi = std::max(a, b);
  return sign * detail::adapt_gl(f, lo, hi, detail::gl15_panel(f, lo, hi), abs_tol, 0);
}

inline double mean(const Eigen::VectorXd& v) {
  if (v.size() == 0) throw domain_error("mean of empty vector");
  return v.mean();
}

inline double sample_variance(const Eigen::VectorXd& v) {
  const auto n = v.size();
  if (n < 2) throw domain_error("sample_variance needs n >= 2");
  const double m = v.mean();
  return (v.array() - m).square().sum() / static_cast<double>(n - 1);
}

inline double sample_sd(const Eigen::VectorXd& v) { return std::sqrt(sample_variance(v)); }

// Type-7 quantile (linear interpolation between order statistics).
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw domain_error("quantile of empty vector");
  if (q <= 0.0) return sorted.front();
  if (q >= 1.0) return sorted.back();
  const double h = q * (static_cast<double>(sorted.size()) - 1.0);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = h - static_cast<double>(lo);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

// Silverman rule-of-thumb bandwidth: 0.9 min(sd, IQR/1.34) n^{-1/5}.
inline double silverman_bandwidth(const Eigen::VectorXd& v) {
  const auto n = v.size();
  if (n < 2) throw domain_error("silverman_bandwidth needs n >= 2");
  std::vector<double> s(v.data(), v.data() + n);
  std::sort(s.begin(), s.end());
  const double iqr = quantile_sorted(s, 0.75) - quantile_sorted(s, 0.25);
  const double sd = sample_sd(v);
  double spread = std::min(sd, iqr / 1.34);
  if (spread <= 0.0) spread = std::max(sd, iqr / 1.34);
  if (spread <= 0.0) throw degenerate_error("running variable has zero spread");
  return 0.9 * spread * std::pow(static_cast<double>(n), -0.2);
}

inline Eigen::MatrixXd with_intercept(const Eigen::MatrixXd& x) {
  Eigen::MatrixXd out(x.rows(), x.cols() + 1);
  out.col(0).setOnes();
  out.rightCols(x.cols()) = x;
  return out;
}

}  // namespace mie
