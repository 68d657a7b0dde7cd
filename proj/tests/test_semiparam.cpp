#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "mie/dgp.hpp"
#include "mie/inference.hpp"
#include "mie/semiparametric.hpp"

using namespace mie;

namespace {

RoyDgp base_roy(double rho_eta_v = -0.5, double sigma_eps = 0.25) {
  RoyDgp roy;
  roy.covariates = {ColumnSpec::normal(0, 1), ColumnSpec::uniform(-1, 1)};
  roy.instruments = {ColumnSpec::normal(0, 1)};
  roy.selection_coef = Eigen::Vector4d(0.0, 0.3, -0.3, 0.8);
  roy.beta0 = Eigen::Vector3d(0.5, -0.3, 0.2);
  roy.beta1 = Eigen::Vector3d(0.5, 0.1, 0.4);  // zero treatment-effect intercept
  roy.sigma_eps = sigma_eps;
  roy.sigma_eta = 0.5;
  roy.rho_eps_v = 0.3;
  roy.rho_eta_v = rho_eta_v;
  return roy;
}

}  // namespace

TEST_CASE("semiparametric fit recovers the slope coefficients") {
  const Dataset d = generate_roy(base_roy(), 12000, 3);
  const SemiparamMTEFit f = fit_semiparametric_liv(d);
  REQUIRE(f.beta_diff_hat[0] == Catch::Approx(0.4).margin(0.08));
  REQUIRE(f.beta_diff_hat[1] == Catch::Approx(0.2).margin(0.08));
  REQUIRE(f.beta0_hat[0] == Catch::Approx(-0.3).margin(0.08));
  REQUIRE(f.beta0_hat[1] == Catch::Approx(0.2).margin(0.08));
}

TEST_CASE("step-3 coefficients land within 3 bootstrap SEs of the truth") {
  const Dataset d = generate_roy(base_roy(), 3000, 9);
  BootstrapPlan plan;
  plan.replications = 60;
  plan.seed = 4;
  plan.threads = 2;
  const BootstrapResult bs = bootstrap(
      [](const Dataset& dd) { return fit_semiparametric_liv(dd).beta_diff_hat[0]; }, d, plan);
  REQUIRE(std::abs(bs.point - 0.4) < 3.0 * bs.std_error);
}

TEST_CASE("eta identically zero gives a flat K-prime") {
  RoyDgp roy = base_roy(0.0);
  roy.sigma_eta = 1e-8;  // no unobserved gain heterogeneity at all
  const Dataset d = generate_roy(roy, 20000, 5);
  const SemiparamMTEFit f = fit_semiparametric_liv(d);
  for (double p = 0.2; p <= 0.8001; p += 0.05)
    REQUIRE(std::abs(f.kprime_at(p)) <= 0.05);
}

TEST_CASE("K-prime tracks the analytic value under joint normality") {
  const RoyDgp roy = base_roy();
  const Dataset d = generate_roy(roy, 20000, 11);
  const SemiparamMTEFit f = fit_semiparametric_liv(d);
  const double snv = roy.sigma_eta_v();
  for (double p = 0.2; p <= 0.8001; p += 0.05)
    REQUIRE(std::abs(f.kprime_at(p) - snv * normal_quantile(p)) < 0.1);
}

TEST_CASE("local-IV identity holds by construction") {
  const Dataset d = generate_roy(base_roy(), 6000, 17);
  const SemiparamMTEFit f = fit_semiparametric_liv(d);
  Eigen::VectorXd x(2);
  x << 0.7, -0.2;
  const double h = 1e-5;
  const double lo = f.support_lo + 0.05, hi = f.support_hi - 0.05;
  for (int g = 0; g <= 10; ++g) {
    const double p = lo + (hi - lo) * g / 10.0;
    const double numeric =
        (f.outcome_mean_at(x, p + h) - f.outcome_mean_at(x, p - h)) / (2.0 * h);
    REQUIRE(numeric == Catch::Approx(f.mte_at(x, p)).margin(1e-6));
  }
}

TEST_CASE("evaluation outside the support raises a support error") {
  const Dataset d = generate_roy(base_roy(), 2000, 19);
  const SemiparamMTEFit f = fit_semiparametric_liv(d);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(2);
  REQUIRE_THROWS_AS(f.mte_at(x, f.support_hi + 0.01), Error);
  REQUIRE_THROWS_AS(f.outcome_mean_at(x, f.support_lo - 0.01), Error);
}

TEST_CASE("narrow propensity support is rejected") {
  RoyDgp roy = base_roy();
  roy.selection_coef = Eigen::Vector4d(0.0, 0.0, 0.0, 0.005);  // nearly no variation
  const Dataset d = generate_roy(roy, 2000, 23);
  REQUIRE_THROWS_AS(fit_semiparametric_liv(d), Error);
}

TEST_CASE("semiparametric fit requires an instrument block") {
  Dataset d = generate_roy(base_roy(), 500, 29);
  d.z.reset();
  d.x_cols_in_z.clear();
  REQUIRE_THROWS_AS(fit_semiparametric_liv(d), Error);
}
