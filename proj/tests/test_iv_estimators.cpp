#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "mie/dgp.hpp"
#include "mie/inference.hpp"
#include "mie/iv_estimators.hpp"
#include "mie/unconfounded.hpp"

using namespace mie;

namespace {

RoyDgp base_roy() {
  RoyDgp roy;
  roy.covariates = {ColumnSpec::normal(0, 1), ColumnSpec::uniform(-1, 1)};
  roy.instruments = {ColumnSpec::normal(0, 1)};
  roy.selection_coef = Eigen::Vector4d(0.1, 0.3, -0.3, 0.8);
  roy.beta0 = Eigen::Vector3d(0.5, -0.3, 0.2);
  roy.beta1 = Eigen::Vector3d(0.5, 0.1, 0.4);
  roy.sigma_eps = 0.5;
  roy.sigma_eta = 0.5;
  roy.rho_eps_v = 0.3;
  roy.rho_eta_v = -0.5;
  return roy;
}

// Location-shift-exact DGP: selection depends on the instrument only.
RoyDgp shift_roy() {
  RoyDgp roy = base_roy();
  roy.covariates = {ColumnSpec::normal(1.0, 1.0), ColumnSpec::uniform(-1, 1)};
  roy.selection_coef = Eigen::Vector4d(0.5, 0.0, 0.0, 0.6);
  roy.sigma_eta = 0.8;
  roy.rho_eta_v = -0.6;
  return roy;
}

}  // namespace

TEST_CASE("plug-in MIE matches the oracle for the normal fit") {
  const RoyDgp roy = base_roy();
  const Dataset d = generate_roy(roy, 20000, 3);
  const RoySwitchingModel m = fit_normal_switching_mle(d);
  for (const auto& fam :
       {InterventionFamily::additive(), InterventionFamily::equalizing(),
        InterventionFamily::ipsi()}) {
    const OracleResult orc = oracle_mie_iv(roy, fam);
    const EstimateReport r = estimate_mie_plugin(m, d, fam);
    REQUIRE(std::abs(r.point - orc.value) < 0.08);
  }
}

TEST_CASE("constant MTE collapses every IV estimand to the constant") {
  RoyDgp roy = base_roy();
  roy.beta1 = roy.beta0;
  roy.beta1[0] += 1.3;  // beta_diff = (1.3, 0, 0)
  roy.rho_eta_v = 0.0;
  roy.sigma_eta = 1e-8;
  const Dataset d = generate_roy(roy, 6000, 7);
  RoySwitchingModel m;  // exact model, no estimation noise
  m.beta0 = roy.beta0;
  m.beta_diff = Eigen::Vector3d(1.3, 0.0, 0.0);
  m.beta1 = m.beta0 + m.beta_diff;
  m.gamma = roy.selection_coef;
  m.sigma_eta_v = 0.0;
  for (const auto& fam : {InterventionFamily::additive(), InterventionFamily::ipsi()}) {
    REQUIRE(estimate_mie_plugin(m, d, fam).point == Catch::Approx(1.3).margin(1e-10));
    for (double delta : {0.05, 0.4})
      REQUIRE(estimate_ie_mte(m, d, fam, delta).point == Catch::Approx(1.3).margin(1e-8));
  }
}

TEST_CASE("IE quadrature matches the analytic antiderivative") {
  const Dataset d = generate_roy(base_roy(), 500, 11);
  const RoySwitchingModel m = fit_normal_switching_mle(d);
  const auto fam = InterventionFamily::ipsi();
  const double delta = 0.7;
  const EstimateReport r = estimate_ie_mte(m, d, fam, delta);

  // closed form: integral of MTE over [a,b] has an elementary antiderivative
  double num = 0.0, den = 0.0;
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    const Eigen::VectorXd zi = d.z->row(i);
    const Eigen::VectorXd xi = d.x.row(i);
    const double a = std::clamp(m.propensity_at(zi), 1e-12, 1.0 - 1e-12);
    const double b = fam.pi_delta(a, delta);
    double slope = m.beta_diff[0];
    for (int j = 0; j < 2; ++j) slope += m.beta_diff[j + 1] * xi[j];
    num += slope * (b - a) +
           m.sigma_eta_v * (normal_pdf(normal_quantile(a)) - normal_pdf(normal_quantile(b)));
    den += b - a;
  }
  REQUIRE(r.point == Catch::Approx(num / den).margin(1e-6));
}

TEST_CASE("IE approaches the plug-in MIE as delta shrinks") {
  const Dataset d = generate_roy(base_roy(), 4000, 13);
  const RoySwitchingModel m = fit_normal_switching_mle(d);
  const auto fam = InterventionFamily::ipsi();
  const double mie = estimate_mie_plugin(m, d, fam).point;
  REQUIRE(std::abs(estimate_ie_mte(m, d, fam, 1e-4).point - mie) <= 1e-3);
  double prev = 1e9;
  for (double delta : {0.1, 0.01, 0.001}) {
    const double gap = std::abs(estimate_ie_mte(m, d, fam, delta).point - mie);
    REQUIRE(gap < prev);
    prev = gap;
  }
}

TEST_CASE("IE raises a support error when intervals exit the fitted support") {
  const Dataset d = generate_roy(base_roy(), 3000, 17);
  const SemiparamMTEFit f = fit_semiparametric_liv(d);
  // additive with a large delta pushes p beyond max(p-hat) for many rows
  try {
    estimate_ie_mte(f, d, InterventionFamily::additive(), 0.5);
    FAIL("expected support error");
  } catch (const Error& e) {
    REQUIRE(e.cls() == "support");
    REQUIRE(std::string(e.what()).find("rows") != std::string::npos);
  }
}

TEST_CASE("no-selection reduction: IV plug-in matches unconfounded RI") {
  RoyDgp roy = base_roy();
  roy.rho_eps_v = 0.0;
  roy.rho_eta_v = 0.0;
  const Dataset d = generate_roy(roy, 16000, 19);
  const RoySwitchingModel m = fit_normal_switching_mle(d);
  const auto fam = InterventionFamily::additive();
  const double plugin = estimate_mie_plugin(m, d, fam).point;
  const double ri = estimate_mie_ri(d, fam).point;
  REQUIRE(std::abs(plugin - ri) < 0.1);
}

TEST_CASE("location shift flags degenerate residuals") {
  const Dataset d = generate_roy(base_roy(), 1000, 23);
  const Eigen::MatrixXd xd = with_intercept(d.x);
  Eigen::VectorXd p(d.n());
  for (Eigen::Index i = 0; i < d.n(); ++i)
    p[i] = expit(0.2 + 0.5 * d.x(i, 0));  // exact function of X
  const LocationShiftDensity lsd = fit_location_shift(d, p);
  REQUIRE(lsd.degenerate);
  const SemiparamMTEFit f = fit_semiparametric_liv(d);
  REQUIRE_THROWS_AS(
      estimate_mie_doubly_robust(d, InterventionFamily::ipsi(), f, lsd), Error);
}

TEST_CASE("location shift recovers the residual scale") {
  const int n = 5000;
  Dataset d;
  d.x = Eigen::MatrixXd(n, 1);
  d.a.resize(n);
  d.y.resize(n);
  CounterRng rng(5, 0);
  CounterRng noise(5, 1);
  Eigen::VectorXd p(n);
  for (int i = 0; i < n; ++i) {
    d.x(i, 0) = rng.next_normal();
    const double eps = 0.1 * noise.next_normal();
    p[i] = std::clamp(expit(0.4 * d.x(i, 0)) + eps, 0.01, 0.99);
    d.a[i] = rng.next_bernoulli(p[i]) ? 1.0 : 0.0;
    d.y[i] = noise.next_normal();
  }
  const LocationShiftDensity lsd = fit_location_shift(d, p);
  REQUIRE_FALSE(lsd.degenerate);
  REQUIRE(lsd.sigma_eps_hat == Catch::Approx(0.1).epsilon(0.10));
  REQUIRE(std::abs(lsd.residuals.mean()) < 1e-8);  // link-score identity
}

TEST_CASE("doubly robust matches the oracle with correct nuisances") {
  const RoyDgp roy = shift_roy();
  const auto fam = InterventionFamily::ipsi();
  const OracleResult orc = oracle_mie_iv(roy, fam);
  const Dataset d = generate_roy(roy, 5000, 29);

  auto dr_estimate = [&](const Dataset& dd) {
    const Eigen::VectorXd g = fit_probit(with_intercept(*dd.z), dd.a);
    RoyMleOptions opts;
    opts.fix_gamma = g;
    opts.compute_vcov = false;
    const RoySwitchingModel m = fit_normal_switching_mle(dd, opts);
    const Eigen::VectorXd p = detail::fitted_propensities(m, dd);
    const LocationShiftDensity lsd = fit_location_shift(dd, p, DensityMode::Kernel);
    return estimate_mie_doubly_robust(dd, fam, m, lsd).point;
  };
  BootstrapPlan plan;
  plan.replications = 60;
  plan.seed = 8;
  plan.threads = 2;
  const BootstrapResult bs = bootstrap(dr_estimate, d, plan);
  REQUIRE(std::abs(bs.point - orc.value) < 3.0 * bs.std_error);
}

TEST_CASE("doubly robust repairs a misspecified outcome model") {
  const RoyDgp roy = shift_roy();
  const auto fam = InterventionFamily::ipsi();
  const OracleResult orc = oracle_mie_iv(roy, fam);
  const Dataset d = generate_roy(roy, 20000, 31);

  const Eigen::VectorXd g = fit_probit(with_intercept(*d.z), d.a);
  RoyMleOptions mis;
  mis.fix_gamma = g;
  mis.no_selection_correction = true;  // outcome model ignores selection
  mis.compute_vcov = false;
  const RoySwitchingModel wrong = fit_normal_switching_mle(d, mis);
  const Eigen::VectorXd p = detail::fitted_propensities(wrong, d);
  const LocationShiftDensity lsd = fit_location_shift(d, p, DensityMode::Kernel);

  const double plug_bias = std::abs(estimate_mie_plugin(wrong, d, fam).point - orc.value);
  const double dr_bias =
      std::abs(estimate_mie_doubly_robust(d, fam, wrong, lsd).point - orc.value);
  REQUIRE(plug_bias > 0.1);            // the misspecification really bites
  REQUIRE(dr_bias < 0.5 * plug_bias);  // and the DR correction removes it
}

TEST_CASE("doubly robust requires lambda-prime") {
  const Dataset d = generate_roy(base_roy(), 1000, 37);
  const RoySwitchingModel m = fit_normal_switching_mle(d);
  const Eigen::VectorXd p = detail::fitted_propensities(m, d);
  const LocationShiftDensity lsd = fit_location_shift(d, p);
  const auto mtp = InterventionFamily::mtp(
      [](double, double) { return 1.0; }, [](double, double delta) { return delta; },
      [](double) { return 0.0; }, [](double) { return 1.0; });
  REQUIRE_THROWS_AS(estimate_mie_doubly_robust(d, mtp, m, lsd), Error);
}

TEST_CASE("plug-in works identically through either fit given equal inputs") {
  // MIE as weighted MPRTE: grouping MTE by propensity bins reproduces the
  // plug-in when lambda depends only on p.
  const RoyDgp roy = base_roy();
  const Dataset d = generate_roy(roy, 12000, 41);
  const RoySwitchingModel m = fit_normal_switching_mle(d);
  const auto fam = InterventionFamily::ipsi();
  const EstimateReport direct = estimate_mie_plugin(m, d, fam);

  const Eigen::VectorXd p = detail::fitted_propensities(m, d);
  const int bins = 40;
  Eigen::VectorXd bin_sum = Eigen::VectorXd::Zero(bins);
  Eigen::VectorXd bin_lam = Eigen::VectorXd::Zero(bins);
  Eigen::VectorXd bin_n = Eigen::VectorXd::Zero(bins);
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    const int b = std::min(bins - 1, static_cast<int>(p[i] * bins));
    const Eigen::VectorXd xi = d.x.row(i);
    bin_sum[b] += m.mte_at(xi, p[i]);
    bin_lam[b] += fam.lambda(p[i]);
    bin_n[b] += 1.0;
  }
  double num = 0, den = 0;
  for (int b = 0; b < bins; ++b) {
    if (bin_n[b] == 0) continue;
    num += bin_lam[b] / bin_n[b] * bin_sum[b];
    den += bin_lam[b];
  }
  REQUIRE(direct.point == Catch::Approx(num / den).margin(0.02));
}
