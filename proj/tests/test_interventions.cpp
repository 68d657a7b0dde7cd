#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <vector>

#include "mie/interventions.hpp"

using namespace mie;

namespace {

std::vector<InterventionFamily> stylized() {
  return {InterventionFamily::additive(), InterventionFamily::multiplicative(),
          InterventionFamily::equalizing(), InterventionFamily::ipsi()};
}

}  // namespace

TEST_CASE("pi_delta closed forms") {
  REQUIRE(InterventionFamily::additive().pi_delta(0.3, 0.2) == Catch::Approx(0.5));
  REQUIRE(InterventionFamily::multiplicative().pi_delta(0.8, std::log(2.0)) == 1.0);
  // IPSI leaves degenerate propensities untouched
  for (double d : {0.1, 1.0, 3.0}) {
    REQUIRE(InterventionFamily::ipsi().pi_delta(0.0, d) == 0.0);
    REQUIRE(InterventionFamily::ipsi().pi_delta(1.0, d) == 1.0);
  }
  REQUIRE(InterventionFamily::equalizing().pi_delta(0.3, 0.5) ==
          Catch::Approx(1.0 - 0.7 * std::exp(-0.5)));
}

TEST_CASE("pi_delta domain errors") {
  const auto f = InterventionFamily::ipsi();
  REQUIRE_THROWS_AS(f.pi_delta(-0.1, 0.1), Error);
  REQUIRE_THROWS_AS(f.pi_delta(1.1, 0.1), Error);
  REQUIRE_THROWS_AS(f.pi_delta(0.5, -0.1), Error);
  REQUIRE_THROWS_AS(f.pi_delta(0.5, 100.0), Error);  // beyond delta_max
}

TEST_CASE("congruity: pi_0 is the identity") {
  for (const auto& f : stylized())
    for (double p = 0.0; p <= 1.0001; p += 0.01)
      REQUIRE(f.pi_delta(std::min(p, 1.0), 0.0) ==
              Catch::Approx(std::min(p, 1.0)).margin(1e-15));
}

TEST_CASE("range: pi_delta stays in [0,1]") {
  for (const auto& f : stylized())
    for (double p = 0.0; p <= 1.0001; p += 0.05)
      for (double d = 0.0; d <= 5.0001; d += 0.25) {
        const double v = f.pi_delta(std::min(p, 1.0), std::min(d, 5.0));
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 1.0);
      }
}

TEST_CASE("monotonicity in delta") {
  for (const auto& f : stylized())
    for (double p = 0.05; p < 1.0; p += 0.1) {
      double prev = p;
      for (double d = 0.1; d <= 5.0; d += 0.1) {
        const double v = f.pi_delta(p, d);
        REQUIRE(v >= prev - 1e-15);
        prev = v;
      }
    }
}

TEST_CASE("lambda closed forms") {
  REQUIRE(InterventionFamily::ipsi().lambda(0.5) == Catch::Approx(0.25));
  REQUIRE(InterventionFamily::additive().lambda(1.0) == 0.0);
  REQUIRE(InterventionFamily::additive().lambda(0.4) == 1.0);
  REQUIRE(InterventionFamily::equalizing().lambda(0.3) == Catch::Approx(0.7));
  REQUIRE(InterventionFamily::multiplicative().lambda(0.6) == Catch::Approx(0.6));
  REQUIRE(InterventionFamily::multiplicative().lambda(1.0) == 0.0);
}

TEST_CASE("lambda_prime closed forms and kink errors") {
  REQUIRE(InterventionFamily::ipsi().lambda_prime(0.5) == Catch::Approx(0.0).margin(1e-15));
  REQUIRE(InterventionFamily::ipsi().lambda_prime(0.2) == Catch::Approx(0.6));
  REQUIRE(InterventionFamily::equalizing().lambda_prime(0.4) == -1.0);
  REQUIRE(InterventionFamily::additive().lambda_prime(0.99) == 0.0);
  REQUIRE(InterventionFamily::multiplicative().lambda_prime(0.5) == 1.0);
  for (const auto& f : {InterventionFamily::additive(), InterventionFamily::multiplicative(),
                        InterventionFamily::equalizing()}) {
    try {
      f.lambda_prime(1.0);
      FAIL("expected kink error");
    } catch (const Error& e) {
      REQUIRE(e.cls() == "kink");
    }
  }
}

TEST_CASE("finite difference matches lambda") {
  REQUIRE(finite_difference_check(InterventionFamily::ipsi(), 0.5, 1e-6) ==
          Catch::Approx(0.25).margin(1e-6));
  REQUIRE(finite_difference_check(InterventionFamily::additive(), 0.3, 1e-6) ==
          Catch::Approx(1.0).margin(1e-9));
  REQUIRE(finite_difference_check(InterventionFamily::equalizing(), 0.3, 1e-6) ==
          Catch::Approx(0.7).margin(1e-6));
}

TEST_CASE("finite-difference property on a 99-point grid") {
  for (const auto& f : stylized())
    for (double h : {1e-4, 1e-6})
      for (int k = 1; k <= 99; ++k) {
        const double p = k / 100.0;
        REQUIRE(std::abs(finite_difference_check(f, p, h) - f.lambda(p)) <= 10.0 * h);
      }
}

TEST_CASE("ipsi odds identity") {
  const auto f = InterventionFamily::ipsi();
  for (double p = 0.01; p < 1.0; p += 0.01)
    for (double d : {0.1, 0.5, 1.0, 2.0}) {
      const double pd = f.pi_delta(p, d);
      const double odds_ratio = (pd / (1.0 - pd)) / (p / (1.0 - p));
      REQUIRE(odds_ratio == Catch::Approx(std::exp(d)).epsilon(1e-12));
    }
}

TEST_CASE("MTP marginalization reproduces stylized families") {
  // stay = 1, join = delta: pi = p + delta(1-p), lambda = 1 - p (ATU-type)
  const auto mtp_atu = InterventionFamily::mtp(
      [](double, double) { return 1.0; }, [](double, double d) { return d; },
      [](double) { return 0.0; }, [](double) { return 1.0; });
  for (double p = 0.0; p <= 1.0001; p += 0.05) {
    const double pc = std::min(p, 1.0);
    REQUIRE(mtp_atu.pi_delta(pc, 0.2) == Catch::Approx(pc + 0.2 * (1.0 - pc)).margin(1e-15));
    REQUIRE(mtp_atu.lambda(pc) == Catch::Approx(1.0 - pc).margin(1e-15));
  }
  // stay = 1, join = delta * p: lambda = p(1-p) (IPSI-type)
  const auto mtp_ipsi = InterventionFamily::mtp(
      [](double, double) { return 1.0; }, [](double p, double d) { return d * p; },
      [](double) { return 0.0; }, [](double p) { return p; });
  for (double p = 0.0; p <= 1.0001; p += 0.05) {
    const double pc = std::min(p, 1.0);
    REQUIRE(mtp_ipsi.lambda(pc) == Catch::Approx(pc * (1.0 - pc)).margin(1e-15));
  }
}

TEST_CASE("custom lambda family") {
  const auto f = InterventionFamily::custom([](double p) { return p * p; },
                                            [](double p) { return 2.0 * p; });
  REQUIRE(f.lambda(0.5) == Catch::Approx(0.25));
  REQUIRE(f.lambda_prime(0.5) == Catch::Approx(1.0));
  REQUIRE(f.pi_delta(0.5, 0.1) == Catch::Approx(0.5 + 0.1 * 0.25));
  // first-order pi_delta respects the finite-difference property
  for (double h : {1e-4, 1e-6})
    REQUIRE(std::abs(finite_difference_check(f, 0.3, h) - f.lambda(0.3)) <= 10.0 * h);
}

TEST_CASE("lambda_prime unavailable for MTP") {
  const auto f = InterventionFamily::mtp(
      [](double, double) { return 1.0; }, [](double, double d) { return d; },
      [](double) { return 0.0; }, [](double) { return 1.0; });
  REQUIRE_THROWS_AS(f.lambda_prime(0.5), Error);
}
