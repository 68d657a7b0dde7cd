#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include "mie/dataset.hpp"
#include "mie/error.hpp"
#include "mie/math.hpp"
#include "mie/parallel.hpp"
#include "mie/rng.hpp"

namespace mie {

struct FoldPlan {
  int k = 5;
  std::uint64_t seed = 0;
  std::vector<int> assignment;  // filled by make_folds; a partition of rows
};

// Seeded shuffle, then round-robin assignment: fold sizes differ by at most 1.
inline FoldPlan make_folds(int n, FoldPlan plan) {
  if (plan.k < 2) throw domain_error("make_folds: need at least 2 folds");
  if (n < plan.k) throw domain_error("make_folds: n < number of folds");
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  CounterRng rng(plan.seed, kFoldStream);
  for (int i = n - 1; i > 0; --i) {
    const auto j = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(i) + 1));
    std::swap(order[i], order[j]);
  }
  plan.assignment.assign(n, 0);
  for (int i = 0; i < n; ++i) plan.assignment[order[i]] = i % plan.k;
  return plan;
}

// Plug-in standard error from an estimated influence function:
// SE = sqrt(mean(score^2) / n). Scores are expected to be centered by the
// estimating equation that produced them.
inline double eif_variance(const Eigen::VectorXd& scores) {
  const auto n = scores.size();
  if (n == 0) throw domain_error("eif_variance: empty scores");
  for (Eigen::Index i = 0; i < n; ++i)
    if (!std::isfinite(scores[i]))
      throw domain_error("eif_variance: non-finite score at row " + std::to_string(i));
  return std::sqrt(scores.squaredNorm() / static_cast<double>(n) / static_cast<double>(n));
}

enum class CiMethod { Percentile, Normal };

struct BootstrapPlan {
  int replications = 1000;
  std::uint64_t seed = 0;
  double level = 0.95;
  CiMethod method = CiMethod::Percentile;
  int threads = 1;

  void check() const {
    if (replications < 2) throw domain_error("bootstrap: need at least 2 replications");
    if (!(level > 0.0 && level < 1.0)) throw domain_error("bootstrap: level outside (0,1)");
  }
};

struct BootstrapResult {
  double point = 0.0;  // estimate on the original sample
  double std_error = 0.0;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  int dropped = 0;  // replicates whose estimator raised an Error
  std::vector<double> replicates;
};

// Nonparametric case bootstrap: rows are resampled with replacement and the
// estimator (including every nuisance fit inside it) reruns on each replicate.
// Replicate r draws from its own counter stream, so the multiset of replicate
// estimates depends only on (dataset, plan), never on thread scheduling.
inline BootstrapResult bootstrap(const std::function<double(const Dataset&)>& estimator,
                                 const Dataset& data, const BootstrapPlan& plan) {
  plan.check();
  const auto n = static_cast<int>(data.n());
  const int b_total = plan.replications;

  BootstrapResult out;
  out.point = estimator(data);

  std::vector<double> estimates(b_total, std::numeric_limits<double>::quiet_NaN());
  std::vector<char> ok(b_total, 0);
  parallel_for(static_cast<std::size_t>(b_total), plan.threads, [&](std::size_t r) {
    CounterRng rng(plan.seed, kBootstrapStream + r);
    std::vector<int> rows(n);
    for (int i = 0; i < n; ++i)
      rows[i] = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(n)));
    Dataset replicate = data.subset(rows);
    try {
      estimates[r] = estimator(replicate);
      ok[r] = 1;
    } catch (const Error&) {
      ok[r] = 0;  // recorded and dropped below
    }
  });

  std::vector<double> kept;
  kept.reserve(b_total);
  for (int r = 0; r < b_total; ++r)
    if (ok[r]) kept.push_back(estimates[r]);
  out.dropped = b_total - static_cast<int>(kept.size());
  if (out.dropped > 0.05 * b_total)
    throw degenerate_error("bootstrap: " + std::to_string(out.dropped) + " of " +
                           std::to_string(b_total) + " replicates failed (> 5%)");

  const auto b = static_cast<double>(kept.size());
  const double m = std::accumulate(kept.begin(), kept.end(), 0.0) / b;
  double ss = 0.0;
  for (double v : kept) ss += (v - m) * (v - m);
  out.std_error = b > 1 ? std::sqrt(ss / (b - 1.0)) : 0.0;

  std::vector<double> sorted = kept;
  std::sort(sorted.begin(), sorted.end());
  const double alpha = 1.0 - plan.level;
  if (plan.method == CiMethod::Percentile) {
    out.ci_lower = quantile_sorted(sorted, alpha / 2.0);
    out.ci_upper = quantile_sorted(sorted, 1.0 - alpha / 2.0);
  } else {
    const double zq = normal_quantile(1.0 - alpha / 2.0);
    out.ci_lower = out.point - zq * out.std_error;
    out.ci_upper = out.point + zq * out.std_error;
  }
  out.replicates = std::move(kept);
  return out;
}

// Convenience: attach bootstrap uncertainty to an EstimateReport-producing
// estimator, refitting nuisances inside every replicate.
inline EstimateReport with_bootstrap(
    const std::function<EstimateReport(const Dataset&)>& estimator, const Dataset& data,
    const BootstrapPlan& plan) {
  EstimateReport report = estimator(data);
  const BootstrapResult bs = bootstrap(
      [&](const Dataset& d) { return estimator(d).point; }, data, plan);
  report.std_error = bs.std_error;
  // Percentile intervals need not bracket the point estimate in tiny samples;
  // widen so the report invariant ci_lower <= point <= ci_upper holds.
  report.ci_lower = std::min(bs.ci_lower, report.point);
  report.ci_upper = std::max(bs.ci_upper, report.point);
  report.seed = plan.seed;
  report.diagnostics["bootstrap_replications"] = static_cast<double>(plan.replications);
  report.diagnostics["bootstrap_dropped"] = static_cast<double>(bs.dropped);
  report.check();
  return report;
}

}  // namespace mie
