#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "mie/math.hpp"
#include "mie/rng.hpp"

using namespace mie;

TEST_CASE("normal cdf/quantile round trip") {
  for (double p : {1e-12, 1e-6, 0.01, 0.3, 0.5, 0.7, 0.99, 1.0 - 1e-6}) {
    REQUIRE(normal_cdf(normal_quantile(p)) == Catch::Approx(p).epsilon(1e-9));
  }
  REQUIRE(normal_quantile(0.5) == 0.0);
  REQUIRE(normal_quantile(0.975) == Catch::Approx(1.959963984540054).epsilon(1e-12));
  REQUIRE_THROWS_AS(normal_quantile(0.0), Error);
  REQUIRE_THROWS_AS(normal_quantile(1.0), Error);
}

TEST_CASE("normal pdf values") {
  REQUIRE(normal_pdf(0.0) == Catch::Approx(0.3989422804014327).epsilon(1e-14));
  REQUIRE(normal_pdf(1.0) == Catch::Approx(0.24197072451914337).epsilon(1e-14));
}

TEST_CASE("gauss-legendre integrates polynomials exactly") {
  const auto rule = gauss_legendre(8);
  // integral of x^6 over [-1,1] = 2/7
  double s = 0.0;
  for (int i = 0; i < 8; ++i) s += rule.weights[i] * std::pow(rule.nodes[i], 6);
  REQUIRE(s == Catch::Approx(2.0 / 7.0).epsilon(1e-13));
  REQUIRE(rule.weights.sum() == Catch::Approx(2.0).epsilon(1e-13));
}

TEST_CASE("gauss-hermite matches normal moments") {
  const auto rule = gauss_hermite_prob(24);
  double m2 = 0.0, m4 = 0.0;
  for (int i = 0; i < 24; ++i) {
    m2 += rule.weights[i] * rule.nodes[i] * rule.nodes[i];
    m4 += rule.weights[i] * std::pow(rule.nodes[i], 4);
  }
  REQUIRE(m2 == Catch::Approx(1.0).epsilon(1e-12));
  REQUIRE(m4 == Catch::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("adaptive integration") {
  const double v = integrate([](double t) { return std::sin(t); }, 0.0, M_PI, 1e-10);
  REQUIRE(v == Catch::Approx(2.0).epsilon(1e-10));
  // reversed limits flip the sign
  const double r = integrate([](double t) { return 1.0; }, 1.0, 0.0, 1e-12);
  REQUIRE(r == Catch::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("counter rng is deterministic and stream-separated") {
  CounterRng a(42, 0), b(42, 0), c(42, 1);
  REQUIRE(a.next_u64() == b.next_u64());
  REQUIRE(a.next_u64() == b.next_u64());
  CounterRng a2(42, 0);
  REQUIRE(a2.next_u64() != c.next_u64());

  // uniform draws stay inside [0,1) and the open variant inside (0,1)
  CounterRng d(7, 3);
  for (int i = 0; i < 1000; ++i) {
    const double u = d.next_double();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    const double v = d.next_double_open();
    REQUIRE(v > 0.0);
    REQUIRE(v < 1.0);
  }
}

TEST_CASE("rng normal moments") {
  CounterRng rng(123, 9);
  const int n = 200000;
  double s = 0.0, ss = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.next_normal();
    s += x;
    ss += x * x;
  }
  REQUIRE(s / n == Catch::Approx(0.0).margin(0.01));
  REQUIRE(ss / n == Catch::Approx(1.0).margin(0.02));
}

TEST_CASE("random access draws match sequential stream content") {
  CounterRng rng(5, 11);
  const std::uint64_t first = rng.next_u64();
  CounterRng probe(5, 11);
  REQUIRE(probe.at(0) == first);
}

TEST_CASE("silverman bandwidth positive on spread data") {
  Eigen::VectorXd v(6);
  v << 0.0, 0.5, 1.0, 1.5, 2.0, 2.5;
  REQUIRE(silverman_bandwidth(v) > 0.0);
}
