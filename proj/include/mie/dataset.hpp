#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "mie/error.hpp"

namespace mie {

// Observed data (X, A, Y) plus an optional instrument block Z whose columns
// include all of X. Immutable after construction by convention: estimators
// never write to a Dataset, so one instance can be shared across concurrent
// runs.
struct Dataset {
  Eigen::MatrixXd x;  // n x d_x covariates
  Eigen::VectorXd a;  // binary treatment
  Eigen::VectorXd y;  // outcome
  std::optional<Eigen::MatrixXd> z;  // n x d_z instruments-plus-covariates
  std::vector<int> x_cols_in_z;      // for each x column, its column index in z
  std::vector<std::string> x_names;
  std::vector<std::string> z_names;

  Eigen::Index n() const { return x.rows(); }
  Eigen::Index dx() const { return x.cols(); }
  Eigen::Index dz() const { return z ? z->cols() : 0; }
  bool has_instruments() const { return z.has_value(); }

  std::string x_name(Eigen::Index j) const {
    return j < static_cast<Eigen::Index>(x_names.size()) ? x_names[j]
                                                         : "x" + std::to_string(j);
  }

  // Row gather; used by bootstrap resampling and by trimming.
  Dataset subset(const std::vector<int>& rows) const {
    Dataset out;
    const auto m = static_cast<Eigen::Index>(rows.size());
    out.x.resize(m, x.cols());
    out.a.resize(m);
    out.y.resize(m);
    if (z) out.z = Eigen::MatrixXd(m, z->cols());
    for (Eigen::Index i = 0; i < m; ++i) {
      out.x.row(i) = x.row(rows[i]);
      out.a[i] = a[rows[i]];
      out.y[i] = y[rows[i]];
      if (z) out.z->row(i) = z->row(rows[i]);
    }
    out.x_cols_in_z = x_cols_in_z;
    out.x_names = x_names;
    out.z_names = z_names;
    return out;
  }
};

// Diagnostic check of every Dataset invariant. Pure; returns one message per
// violation, naming the offending row/column.
inline std::vector<std::string> validate(const Dataset& d) {
  std::vector<std::string> out;
  const auto n = d.x.rows();
  if (n < 2) out.push_back("dataset has fewer than 2 rows");
  if (d.a.size() != n)
    out.push_back("treatment length " + std::to_string(d.a.size()) + " != n rows " +
                  std::to_string(n));
  if (d.y.size() != n)
    out.push_back("outcome length " + std::to_string(d.y.size()) + " != n rows " +
                  std::to_string(n));
  if (d.z && d.z->rows() != n)
    out.push_back("instrument matrix rows " + std::to_string(d.z->rows()) + " != n rows " +
                  std::to_string(n));

  // One finding per matrix keeps messages short.
  auto first_nonfinite = [](const Eigen::MatrixXd& m) -> std::optional<std::pair<int, int>> {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j)
        if (!std::isfinite(m(i, j))) return std::make_pair(static_cast<int>(i),
                                                           static_cast<int>(j));
    return std::nullopt;
  };
  if (auto bad = first_nonfinite(d.x))
    out.push_back("non-finite covariate at row " + std::to_string(bad->first) + ", column " +
                  d.x_name(bad->second));

  const auto na = std::min(d.a.size(), n);
  int n_treated = 0, n_control = 0;
  for (Eigen::Index i = 0; i < na; ++i) {
    const double ai = d.a[i];
    if (!std::isfinite(ai)) {
      out.push_back("non-finite treatment at row " + std::to_string(i));
    } else if (ai != 0.0 && ai != 1.0) {
      out.push_back("non-binary treatment at row " + std::to_string(i));
    } else {
      (ai == 1.0 ? n_treated : n_control)++;
    }
  }
  if (na > 0 && n_treated == 0) out.push_back("no treated rows");
  if (na > 0 && n_control == 0) out.push_back("no control rows");

  for (Eigen::Index i = 0; i < std::min(d.y.size(), n); ++i)
    if (!std::isfinite(d.y[i])) {
      out.push_back("non-finite outcome at row " + std::to_string(i));
      break;
    }

  if (d.z) {
    if (auto bad = first_nonfinite(*d.z))
      out.push_back("non-finite instrument value at row " + std::to_string(bad->first) +
                    ", column " + std::to_string(bad->second));
    if (static_cast<Eigen::Index>(d.x_cols_in_z.size()) != d.x.cols()) {
      out.push_back("x_cols_in_z size " + std::to_string(d.x_cols_in_z.size()) +
                    " != number of covariate columns " + std::to_string(d.x.cols()));
    } else {
      std::set<int> seen;
      for (std::size_t j = 0; j < d.x_cols_in_z.size(); ++j) {
        const int c = d.x_cols_in_z[j];
        if (c < 0 || c >= d.z->cols())
          out.push_back("x column " + std::to_string(j) + " maps to invalid z column " +
                        std::to_string(c));
        else if (!seen.insert(c).second)
          out.push_back("duplicate z column " + std::to_string(c) + " in x_cols_in_z");
      }
    }
  }
  return out;
}

inline void require_valid(const Dataset& d) {
  const auto violations = validate(d);
  if (violations.empty()) return;
  std::string msg = "invalid dataset:";
  for (const auto& v : violations) msg += " [" + v + "]";
  throw validation_error(msg);
}

enum class Regime { Unconfounded, IvLatentIndex };

// Which effect a report refers to: IE at a given delta, or its delta->0 limit.
struct EstimandKind {
  enum class Effect { IE, MIE } effect = Effect::MIE;
  double delta = 0.0;  // only meaningful for IE
  Regime regime = Regime::Unconfounded;
  std::string family;

  static EstimandKind mie(Regime r, std::string fam) {
    EstimandKind k;
    k.effect = Effect::MIE;
    k.regime = r;
    k.family = std::move(fam);
    return k;
  }
  static EstimandKind ie(Regime r, std::string fam, double delta) {
    if (!(delta > 0.0)) throw domain_error("IE requires delta > 0");
    EstimandKind k;
    k.effect = Effect::IE;
    k.delta = delta;
    k.regime = r;
    k.family = std::move(fam);
    return k;
  }

  std::string label() const {
    std::string s = effect == Effect::IE
                        ? "IE[" + family + ",delta=" + std::to_string(delta) + "]"
                        : "MIE[" + family + "]";
    s += regime == Regime::Unconfounded ? "/unconfounded" : "/iv-latent-index";
    return s;
  }
};

struct EstimateReport {
  std::string estimand;
  double point = 0.0;
  std::optional<double> std_error;
  std::optional<double> ci_lower;
  std::optional<double> ci_upper;
  Eigen::Index n_used = 0;
  std::string method;
  std::optional<std::uint64_t> seed;
  std::map<std::string, double> diagnostics;

  void check() const {
    if (std_error && *std_error < 0.0) throw validation_error("negative std_error in report");
    if (ci_lower && ci_upper && !(*ci_lower <= point && point <= *ci_upper))
      throw validation_error("confidence interval does not bracket the point estimate");
  }
};

}  // namespace mie
