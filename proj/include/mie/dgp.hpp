#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mie/dataset.hpp"
#include "mie/error.hpp"
#include "mie/interventions.hpp"
#include "mie/math.hpp"
#include "mie/parallel.hpp"
#include "mie/rng.hpp"

namespace mie {

// Column sampler: uniform / normal / Bernoulli covers every overlap regime the
// tests need.
struct ColumnSpec {
  enum class Dist { Normal, Uniform, Bernoulli } dist = Dist::Normal;
  double a = 0.0;  // mean | lower | success probability
  double b = 1.0;  // sd   | upper | (unused)

  static ColumnSpec normal(double mean, double sd) { return {Dist::Normal, mean, sd}; }
  static ColumnSpec uniform(double lo, double hi) { return {Dist::Uniform, lo, hi}; }
  static ColumnSpec bernoulli(double p) { return {Dist::Bernoulli, p, 0.0}; }

  double draw(CounterRng& rng) const {
    switch (dist) {
      case Dist::Normal:
        return a + b * rng.next_normal();
      case Dist::Uniform:
        return rng.next_uniform(a, b);
      case Dist::Bernoulli:
        return rng.next_bernoulli(a) ? 1.0 : 0.0;
    }
    throw domain_error("unknown column distribution");
  }
};

// Closed-form function specs for CATE and baseline means, so oracles can
// integrate them exactly.
struct FunctionSpec {
  enum class Kind { Linear, Quadratic, Step } kind = Kind::Linear;
  Eigen::VectorXd coef;       // [c0, c1..cd]; Quadratic appends d square terms
  int step_column = 0;        // Step: index of the thresholded column
  double step_threshold = 0;  // Step: c0 + c1 * 1{x_j >= t}

  static FunctionSpec linear(Eigen::VectorXd c) {
    FunctionSpec f;
    f.kind = Kind::Linear;
    f.coef = std::move(c);
    return f;
  }
  static FunctionSpec quadratic(Eigen::VectorXd c) {
    FunctionSpec f;
    f.kind = Kind::Quadratic;
    f.coef = std::move(c);
    return f;
  }
  static FunctionSpec step(double base, double jump, int column, double threshold) {
    FunctionSpec f;
    f.kind = Kind::Step;
    f.coef = Eigen::Vector2d(base, jump);
    f.step_column = column;
    f.step_threshold = threshold;
    return f;
  }
  static FunctionSpec constant(double c) { return linear(Eigen::VectorXd::Constant(1, c)); }

  double eval(const Eigen::VectorXd& x) const {
    switch (kind) {
      case Kind::Linear: {
        double v = coef[0];
        for (Eigen::Index j = 0; j + 1 < coef.size() && j < x.size(); ++j)
          v += coef[j + 1] * x[j];
        return v;
      }
      case Kind::Quadratic: {
        const auto d = x.size();
        if (coef.size() != 1 + 2 * d)
          throw config_error("quadratic spec needs 1 + 2*d coefficients");
        double v = coef[0];
        for (Eigen::Index j = 0; j < d; ++j)
          v += coef[j + 1] * x[j] + coef[d + j + 1] * x[j] * x[j];
        return v;
      }
      case Kind::Step:
        return coef[0] + (x[step_column] >= step_threshold ? coef[1] : 0.0);
    }
    throw domain_error("unknown function spec kind");
  }
};

// Data-generating process satisfying unconfoundedness by construction:
// A ~ Bernoulli(p0(X)), Y = mu0(X) + tau(X) A + noise.
struct UnconfoundedDgp {
  std::vector<ColumnSpec> covariates;
  enum class Link { Logit, Identity } link = Link::Logit;
  Eigen::VectorXd propensity_coef;  // [c0, c1..cd] on the link scale
  FunctionSpec cate;
  FunctionSpec baseline;
  double noise_sd = 1.0;

  double propensity(const Eigen::VectorXd& x) const {
    double eta = propensity_coef[0];
    for (Eigen::Index j = 0; j + 1 < propensity_coef.size() && j < x.size(); ++j)
      eta += propensity_coef[j + 1] * x[j];
    const double p = link == Link::Logit ? expit(eta) : eta;
    if (!(p > -1e-12 && p < 1.0 + 1e-12))
      throw domain_error("unconfounded dgp: propensity " + std::to_string(p) +
                         " outside [0,1]");
    return std::clamp(p, 1e-12, 1.0 - 1e-12);
  }
};

// Streams: column j uses stream j; treatment uses stream d; noise d+1.
inline Dataset generate_unconfounded(const UnconfoundedDgp& dgp, int n, std::uint64_t seed) {
  const auto d = static_cast<Eigen::Index>(dgp.covariates.size());
  Dataset data;
  data.x.resize(n, d);
  data.a.resize(n);
  data.y.resize(n);
  for (Eigen::Index j = 0; j < d; ++j) {
    CounterRng rng(seed, static_cast<std::uint64_t>(j));
    for (int i = 0; i < n; ++i) data.x(i, j) = dgp.covariates[j].draw(rng);
  }
  CounterRng a_rng(seed, static_cast<std::uint64_t>(d));
  CounterRng e_rng(seed, static_cast<std::uint64_t>(d) + 1);
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd xi = data.x.row(i);
    data.a[i] = a_rng.next_bernoulli(dgp.propensity(xi)) ? 1.0 : 0.0;
    data.y[i] = dgp.baseline.eval(xi) + dgp.cate.eval(xi) * data.a[i] +
                dgp.noise_sd * e_rng.next_normal();
  }
  for (Eigen::Index j = 0; j < d; ++j) data.x_names.push_back("x" + std::to_string(j));
  return data;
}

// Generalized Roy model: A = 1{gamma'Z >= V}, Y = mu0(X) + (mu1-mu0)(X) A +
// eps + eta A, with (eps, eta, V) jointly normal, sigma_V = 1 and
// cov(eps,eta) = 0. True p0(z) = Phi(gamma'z).
struct RoyDgp {
  std::vector<ColumnSpec> covariates;   // X columns
  std::vector<ColumnSpec> instruments;  // extra Z columns beyond X
  Eigen::VectorXd selection_coef;       // gamma on [1, X, W]
  Eigen::VectorXd beta0;                // [1, X] coefficients of mu0
  Eigen::VectorXd beta1;                // [1, X] coefficients of mu1
  double sigma_eps = 1.0;
  double sigma_eta = 0.5;
  double rho_eps_v = 0.0;
  double rho_eta_v = 0.0;

  double sigma_eta_v() const { return rho_eta_v * sigma_eta; }

  void check() const {
    if (!(sigma_eps > 0.0) || !(sigma_eta >= 0.0))
      throw config_error("roy dgp: sigma parameters must be positive");
    if (std::abs(rho_eps_v) >= 1.0 || std::abs(rho_eta_v) >= 1.0)
      throw config_error("roy dgp: correlations must lie in (-1,1)");
    // (eps, eta, V) covariance with cov(eps,eta)=0 is PSD iff
    // rho_eps_v^2 + rho_eta_v^2 <= 1.
    if (rho_eps_v * rho_eps_v + rho_eta_v * rho_eta_v > 1.0)
      throw config_error("roy dgp: implied (eps,eta,V) covariance not PSD");
    bool relevant = false;
    for (Eigen::Index j = 1 + static_cast<Eigen::Index>(covariates.size());
         j < selection_coef.size(); ++j)
      if (selection_coef[j] != 0.0) relevant = true;
    if (!instruments.empty() && !relevant)
      throw config_error("roy dgp: instrument coefficients are all zero (relevance)");
  }

  double true_propensity(const Eigen::VectorXd& z) const {
    double eta = selection_coef[0];
    for (Eigen::Index j = 0; j < z.size(); ++j) eta += selection_coef[j + 1] * z[j];
    return normal_cdf(eta);
  }

  double mte(const Eigen::VectorXd& x, double u) const {
    double v = beta1[0] - beta0[0];
    for (Eigen::Index j = 0; j < x.size(); ++j) v += (beta1[j + 1] - beta0[j + 1]) * x[j];
    return v + sigma_eta_v() * normal_quantile(u);
  }
};

inline Dataset generate_roy(const RoyDgp& dgp, int n, std::uint64_t seed) {
  dgp.check();
  const auto dx = static_cast<Eigen::Index>(dgp.covariates.size());
  const auto dw = static_cast<Eigen::Index>(dgp.instruments.size());
  const auto dz = dx + dw;
  Dataset data;
  data.x.resize(n, dx);
  data.z = Eigen::MatrixXd(n, dz);
  data.a.resize(n);
  data.y.resize(n);

  for (Eigen::Index j = 0; j < dz; ++j) {
    CounterRng rng(seed, static_cast<std::uint64_t>(j));
    const ColumnSpec& spec =
        j < dx ? dgp.covariates[j] : dgp.instruments[j - dx];
    for (int i = 0; i < n; ++i) (*data.z)(i, j) = spec.draw(rng);
  }
  data.x = data.z->leftCols(dx);

  // Errors: (eps, eta, V) from independent normals through the Cholesky factor
  // of the implied covariance (cov(eps,eta) = 0, sigma_V = 1).
  const double s_ev = dgp.rho_eps_v * dgp.sigma_eps;
  const double s_nv = dgp.rho_eta_v * dgp.sigma_eta;
  Eigen::Matrix3d cov;
  cov << dgp.sigma_eps * dgp.sigma_eps, 0.0, s_ev,
         0.0, dgp.sigma_eta * dgp.sigma_eta, s_nv,
         s_ev, s_nv, 1.0;
  Eigen::LLT<Eigen::Matrix3d> llt(cov);
  if (llt.info() != Eigen::Success)
    throw config_error("roy dgp: error covariance is not positive definite");
  const Eigen::Matrix3d chol = llt.matrixL();

  CounterRng e1(seed, static_cast<std::uint64_t>(dz));
  CounterRng e2(seed, static_cast<std::uint64_t>(dz) + 1);
  CounterRng e3(seed, static_cast<std::uint64_t>(dz) + 2);
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d raw(e1.next_normal(), e2.next_normal(), e3.next_normal());
    const Eigen::Vector3d err = chol * raw;  // (eps, eta, V)
    const Eigen::VectorXd zi = data.z->row(i);
    double index = dgp.selection_coef[0];
    for (Eigen::Index j = 0; j < dz; ++j) index += dgp.selection_coef[j + 1] * zi[j];
    const double a = index >= err[2] ? 1.0 : 0.0;
    double mu0 = dgp.beta0[0], mu1 = dgp.beta1[0];
    for (Eigen::Index j = 0; j < dx; ++j) {
      mu0 += dgp.beta0[j + 1] * data.x(i, j);
      mu1 += dgp.beta1[j + 1] * data.x(i, j);
    }
    data.a[i] = a;
    data.y[i] = mu0 + (mu1 - mu0) * a + err[0] + err[1] * a;
  }
  data.x_cols_in_z.resize(dx);
  for (Eigen::Index j = 0; j < dx; ++j) data.x_cols_in_z[j] = static_cast<int>(j);
  for (Eigen::Index j = 0; j < dz; ++j)
    data.z_names.push_back(j < dx ? "x" + std::to_string(j)
                                  : "w" + std::to_string(j - dx));
  for (Eigen::Index j = 0; j < dx; ++j) data.x_names.push_back("x" + std::to_string(j));
  return data;
}

struct OracleResult {
  double value = 0.0;
  enum class Method { Quadrature, MonteCarlo } method = Method::MonteCarlo;
  std::int64_t mc_draws = 0;
  std::optional<double> mc_se;
};

struct OracleOptions {
  enum class Method { Auto, Quadrature, MonteCarlo } method = Method::Auto;
  std::int64_t mc_draws = 1'000'000;
  std::uint64_t seed = 2718281828ull;
  int threads = 1;
  int quadrature_order = 60;
};

namespace detail {

// Tensor-product quadrature over the covariate law: Gauss-Hermite for normal
// columns, Gauss-Legendre for uniform, exact two-point sums for Bernoulli.
// Usable for low dimension only; the MC path covers the rest.
template <typename F>
double tensor_expectation(const std::vector<ColumnSpec>& cols, int order, F&& f) {
  const auto d = cols.size();
  std::vector<QuadratureRule> rules(d);
  for (std::size_t j = 0; j < d; ++j) {
    switch (cols[j].dist) {
      case ColumnSpec::Dist::Normal: {
        rules[j] = gauss_hermite_prob(order);
        rules[j].nodes = (cols[j].a + cols[j].b * rules[j].nodes.array()).matrix();
        break;
      }
      case ColumnSpec::Dist::Uniform: {
        rules[j] = gauss_legendre(order);
        const double lo = cols[j].a, hi = cols[j].b;
        rules[j].nodes = (0.5 * (lo + hi) + 0.5 * (hi - lo) * rules[j].nodes.array()).matrix();
        rules[j].weights *= 0.5;  // normalize total mass to 1
        break;
      }
      case ColumnSpec::Dist::Bernoulli: {
        rules[j].nodes = Eigen::Vector2d(0.0, 1.0);
        rules[j].weights = Eigen::Vector2d(1.0 - cols[j].a, cols[j].a);
        break;
      }
    }
  }
  Eigen::VectorXd x(d);
  double total = 0.0;
  std::vector<int> idx(d, 0);
  for (;;) {
    double w = 1.0;
    for (std::size_t j = 0; j < d; ++j) {
      x[j] = rules[j].nodes[idx[j]];
      w *= rules[j].weights[idx[j]];
    }
    total += w * f(x);
    std::size_t j = 0;
    for (; j < d; ++j) {
      if (++idx[j] < rules[j].nodes.size()) break;
      idx[j] = 0;
    }
    if (j == d) break;
  }
  return total;
}

// Monte-Carlo mean of a pair (numerator, denominator) with the delta-method
// standard error for the ratio. Fixed block structure makes the reduction
// independent of thread count.
template <typename DrawFn>
std::pair<double, double> mc_ratio(std::int64_t draws, std::uint64_t seed, int threads,
                                   DrawFn&& draw) {
  constexpr std::int64_t kBlock = 65536;
  const auto n_blocks = static_cast<std::size_t>((draws + kBlock - 1) / kBlock);
  struct Moments {
    double su = 0, sv = 0, suu = 0, svv = 0, suv = 0;
    std::int64_t n = 0;
  };
  std::vector<Moments> partial(n_blocks);
  parallel_for(n_blocks, threads, [&](std::size_t b) {
    const std::int64_t lo = static_cast<std::int64_t>(b) * kBlock;
    const std::int64_t hi = std::min(draws, lo + kBlock);
    Moments m;
    CounterRng rng(seed, kOracleStream + b);
    for (std::int64_t i = lo; i < hi; ++i) {
      const auto [u, v] = draw(rng);
      m.su += u;
      m.sv += v;
      m.suu += u * u;
      m.svv += v * v;
      m.suv += u * v;
      ++m.n;
    }
    partial[b] = m;
  });
  Moments t;
  for (const auto& m : partial) {  // fixed order: deterministic at any thread count
    t.su += m.su;
    t.sv += m.sv;
    t.suu += m.suu;
    t.svv += m.svv;
    t.suv += m.suv;
    t.n += m.n;
  }
  const auto n = static_cast<double>(t.n);
  const double mu = t.su / n, mv = t.sv / n;
  if (std::abs(mv) < 1e-300) throw degenerate_error("oracle: denominator integrates to zero");
  const double ratio = mu / mv;
  const double vuu = t.suu / n - mu * mu;
  const double vvv = t.svv / n - mv * mv;
  const double vuv = t.suv / n - mu * mv;
  const double var_ratio = (vuu - 2.0 * ratio * vuv + ratio * ratio * vvv) / (mv * mv);
  return {ratio, std::sqrt(std::max(0.0, var_ratio) / n)};
}

}  // namespace detail

// MIE under unconfoundedness: E[lambda(p0(X)) tau(X)] / E[lambda(p0(X))].
inline OracleResult oracle_mie_unconfounded(const UnconfoundedDgp& dgp,
                                            const InterventionFamily& family,
                                            const OracleOptions& opts = {}) {
  const bool quad = opts.method == OracleOptions::Method::Quadrature ||
                    (opts.method == OracleOptions::Method::Auto && dgp.covariates.size() <= 3);
  OracleResult res;
  if (quad) {
    const double num = detail::tensor_expectation(
        dgp.covariates, opts.quadrature_order, [&](const Eigen::VectorXd& x) {
          return family.lambda(dgp.propensity(x)) * dgp.cate.eval(x);
        });
    const double den = detail::tensor_expectation(
        dgp.covariates, opts.quadrature_order,
        [&](const Eigen::VectorXd& x) { return family.lambda(dgp.propensity(x)); });
    if (std::abs(den) < 1e-300) throw degenerate_error("oracle: zero mean weight");
    res.value = num / den;
    res.method = OracleResult::Method::Quadrature;
    return res;
  }
  const auto d = dgp.covariates.size();
  auto [value, se] = detail::mc_ratio(
      opts.mc_draws, opts.seed, opts.threads, [&](CounterRng& rng) {
        Eigen::VectorXd x(d);
        for (std::size_t j = 0; j < d; ++j) x[j] = dgp.covariates[j].draw(rng);
        const double lam = family.lambda(dgp.propensity(x));
        return std::pair<double, double>(lam * dgp.cate.eval(x), lam);
      });
  res.value = value;
  res.method = OracleResult::Method::MonteCarlo;
  res.mc_draws = opts.mc_draws;
  res.mc_se = se;
  return res;
}

// IE under unconfoundedness: E[(pi_delta - p0) tau] / E[pi_delta - p0].
inline OracleResult oracle_ie_unconfounded(const UnconfoundedDgp& dgp,
                                           const InterventionFamily& family, double delta,
                                           const OracleOptions& opts = {}) {
  if (!(delta > 0.0)) throw domain_error("oracle_ie: delta must be > 0");
  const bool quad = opts.method == OracleOptions::Method::Quadrature ||
                    (opts.method == OracleOptions::Method::Auto && dgp.covariates.size() <= 3);
  OracleResult res;
  auto increment = [&](const Eigen::VectorXd& x) {
    const double p = dgp.propensity(x);
    return family.pi_delta(p, delta) - p;
  };
  if (quad) {
    const double num = detail::tensor_expectation(
        dgp.covariates, opts.quadrature_order,
        [&](const Eigen::VectorXd& x) { return increment(x) * dgp.cate.eval(x); });
    const double den = detail::tensor_expectation(dgp.covariates, opts.quadrature_order,
                                                  increment);
    if (std::abs(den) < 1e-300) throw degenerate_error("oracle: zero mean increment");
    res.value = num / den;
    res.method = OracleResult::Method::Quadrature;
    return res;
  }
  const auto d = dgp.covariates.size();
  auto [value, se] = detail::mc_ratio(
      opts.mc_draws, opts.seed, opts.threads, [&](CounterRng& rng) {
        Eigen::VectorXd x(d);
        for (std::size_t j = 0; j < d; ++j) x[j] = dgp.covariates[j].draw(rng);
        const double inc = increment(x);
        return std::pair<double, double>(inc * dgp.cate.eval(x), inc);
      });
  res.value = value;
  res.method = OracleResult::Method::MonteCarlo;
  res.mc_draws = opts.mc_draws;
  res.mc_se = se;
  return res;
}

namespace detail {

template <typename F>
std::pair<double, double> roy_mc(const RoyDgp& dgp, const OracleOptions& opts, F&& terms) {
  const auto dx = dgp.covariates.size();
  const auto dz = dx + dgp.instruments.size();
  return mc_ratio(opts.mc_draws, opts.seed, opts.threads, [&](CounterRng& rng) {
    Eigen::VectorXd z(dz);
    for (std::size_t j = 0; j < dz; ++j)
      z[j] = (j < dx ? dgp.covariates[j] : dgp.instruments[j - dx]).draw(rng);
    return terms(z.head(dx).eval(), dgp.true_propensity(z));
  });
}

}  // namespace detail

// MIE in the IV regime: E[lambda(p0(Z)) MTE(X, p0(Z))] / E[lambda(p0(Z))],
// with the closed-form normal MTE.
inline OracleResult oracle_mie_iv(const RoyDgp& dgp, const InterventionFamily& family,
                                  const OracleOptions& opts = {}) {
  dgp.check();
  auto [value, se] = detail::roy_mc(dgp, opts, [&](const Eigen::VectorXd& x, double p) {
    const double lam = family.lambda(p);
    return std::pair<double, double>(lam * dgp.mte(x, std::clamp(p, 1e-12, 1.0 - 1e-12)),
                                     lam);
  });
  OracleResult res;
  res.value = value;
  res.method = OracleResult::Method::MonteCarlo;
  res.mc_draws = opts.mc_draws;
  res.mc_se = se;
  return res;
}

// Exact inner integral of the normal MTE over [a, b]:
// integral of Phi^{-1} is -pdf(quantile(.)), so no numerical quadrature needed.
inline double roy_mte_integral(const RoyDgp& dgp, const Eigen::VectorXd& x, double a,
                               double b) {
  double slope = dgp.beta1[0] - dgp.beta0[0];
  for (Eigen::Index j = 0; j < x.size(); ++j)
    slope += (dgp.beta1[j + 1] - dgp.beta0[j + 1]) * x[j];
  auto pdf_at_quantile = [](double p) {
    if (p <= 0.0 || p >= 1.0) return 0.0;
    return normal_pdf(normal_quantile(p));
  };
  return slope * (b - a) + dgp.sigma_eta_v() * (pdf_at_quantile(a) - pdf_at_quantile(b));
}

// IE in the IV regime: E[ integral_{p0}^{pi_delta} MTE du ] / E[pi_delta - p0].
inline OracleResult oracle_ie_iv(const RoyDgp& dgp, const InterventionFamily& family,
                                 double delta, const OracleOptions& opts = {}) {
  if (!(delta > 0.0)) throw domain_error("oracle_ie: delta must be > 0");
  dgp.check();
  auto [value, se] = detail::roy_mc(dgp, opts, [&](const Eigen::VectorXd& x, double p) {
    const double pd = family.pi_delta(p, delta);
    return std::pair<double, double>(roy_mte_integral(dgp, x, p, pd), pd - p);
  });
  OracleResult res;
  res.value = value;
  res.method = OracleResult::Method::MonteCarlo;
  res.mc_draws = opts.mc_draws;
  res.mc_se = se;
  return res;
}

}  // namespace mie
