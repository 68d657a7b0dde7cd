#include <catch2/catch_amalgamated.hpp>
#include <algorithm>
#include <cmath>

#include "mie/dgp.hpp"
#include "mie/inference.hpp"
#include "mie/unconfounded.hpp"

using namespace mie;

TEST_CASE("make_folds partitions evenly") {
  const FoldPlan p10 = make_folds(10, FoldPlan{5, 42, {}});
  std::vector<int> counts(5, 0);
  for (int f : p10.assignment) counts[f]++;
  for (int c : counts) REQUIRE(c == 2);

  const FoldPlan p11 = make_folds(11, FoldPlan{5, 42, {}});
  counts.assign(5, 0);
  for (int f : p11.assignment) counts[f]++;
  std::sort(counts.begin(), counts.end());
  REQUIRE(counts == std::vector<int>{2, 2, 2, 2, 3});

  REQUIRE(make_folds(10, FoldPlan{5, 7, {}}).assignment ==
          make_folds(10, FoldPlan{5, 7, {}}).assignment);
  REQUIRE(make_folds(10, FoldPlan{5, 7, {}}).assignment !=
          make_folds(10, FoldPlan{5, 8, {}}).assignment);
  REQUIRE_THROWS_AS(make_folds(3, FoldPlan{5, 0, {}}), Error);
}

TEST_CASE("eif_variance on zero and gaussian scores") {
  REQUIRE(eif_variance(Eigen::VectorXd::Zero(50)) == 0.0);
  CounterRng rng(5, 0);
  Eigen::VectorXd scores(10000);
  for (int i = 0; i < 10000; ++i) scores[i] = rng.next_normal();
  REQUIRE(eif_variance(scores) == Catch::Approx(0.01).epsilon(0.05));
}

namespace {

Dataset fixed_data(int n, std::uint64_t seed) {
  CounterRng rng(seed, 0);
  Dataset d;
  d.x = Eigen::MatrixXd(n, 1);
  d.a.resize(n);
  d.y.resize(n);
  for (int i = 0; i < n; ++i) {
    d.x(i, 0) = rng.next_normal();
    d.a[i] = rng.next_bernoulli(0.5) ? 1.0 : 0.0;
    d.y[i] = 1.0 + 0.5 * d.x(i, 0) + rng.next_normal();
  }
  return d;
}

}  // namespace

TEST_CASE("bootstrap SE of the sample mean matches the classical formula") {
  const Dataset d = fixed_data(400, 11);
  BootstrapPlan plan;
  plan.replications = 400;
  plan.seed = 123;
  const BootstrapResult r =
      bootstrap([](const Dataset& dd) { return dd.y.mean(); }, d, plan);
  const double classical = sample_sd(d.y) / std::sqrt(400.0);
  REQUIRE(r.std_error == Catch::Approx(classical).epsilon(0.15));
  REQUIRE(r.ci_lower < r.ci_upper);
}

TEST_CASE("bootstrap of a constant estimator") {
  const Dataset d = fixed_data(50, 3);
  BootstrapPlan plan;
  plan.replications = 100;
  const BootstrapResult r = bootstrap([](const Dataset&) { return 2.5; }, d, plan);
  REQUIRE(r.std_error == 0.0);
  REQUIRE(r.ci_lower == 2.5);
  REQUIRE(r.ci_upper == 2.5);
}

TEST_CASE("bootstrap is deterministic and thread-count independent") {
  const Dataset d = fixed_data(200, 5);
  auto est = [](const Dataset& dd) { return dd.y.mean() + dd.x.col(0).mean(); };
  BootstrapPlan plan;
  plan.replications = 200;
  plan.seed = 77;
  plan.threads = 1;
  const BootstrapResult r1 = bootstrap(est, d, plan);
  const BootstrapResult r2 = bootstrap(est, d, plan);
  plan.threads = 4;
  const BootstrapResult r4 = bootstrap(est, d, plan);
  REQUIRE(r1.std_error == r2.std_error);
  REQUIRE(r1.std_error == r4.std_error);
  REQUIRE(r1.replicates == r4.replicates);
}

TEST_CASE("bootstrap aborts when too many replicates fail") {
  Dataset d;  // three rows, one treated: resampling often loses an arm
  d.x = Eigen::MatrixXd::Zero(3, 1);
  d.a = Eigen::Vector3d(1, 0, 0);
  d.y = Eigen::Vector3d(1, 2, 3);
  BootstrapPlan plan;
  plan.replications = 200;
  auto est = [](const Dataset& dd) -> double {
    if (dd.a.sum() == 0.0 || dd.a.sum() == dd.a.size())
      throw degenerate_error("single-arm replicate");
    return dd.y.mean();
  };
  REQUIRE_THROWS_AS(bootstrap(est, d, plan), Error);
}

TEST_CASE("percentile CIs for MIE(IPSI) cover the oracle") {
  UnconfoundedDgp dgp;
  dgp.covariates = {ColumnSpec::normal(0, 1), ColumnSpec::uniform(-1, 1)};
  dgp.propensity_coef = Eigen::Vector3d(0.2, 0.8, -0.5);
  dgp.cate = FunctionSpec::linear(Eigen::Vector3d(1.0, 0.5, 0.25));
  dgp.baseline = FunctionSpec::linear(Eigen::Vector3d(0.5, -0.3, 0.2));
  dgp.noise_sd = 1.0;
  const auto family = InterventionFamily::ipsi();
  const double oracle = oracle_mie_unconfounded(dgp, family).value;

  int covered = 0;
  const int trials = 100;
  for (int t = 0; t < trials; ++t) {
    const Dataset d = generate_unconfounded(dgp, 2000, 1000 + t);
    BootstrapPlan plan;
    plan.replications = 200;
    plan.seed = 555 + t;
    plan.threads = 2;
    const BootstrapResult r = bootstrap(
        [&](const Dataset& dd) { return estimate_mie_ri(dd, family).point; }, d, plan);
    if (oracle >= r.ci_lower && oracle <= r.ci_upper) ++covered;
  }
  REQUIRE(covered >= 88);
}
