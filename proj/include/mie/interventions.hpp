#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>

#include "mie/error.hpp"

namespace mie {

// A delta-indexed family of interventions described by how it moves the
// baseline propensity score: pi_delta(p0), its local derivative
// lambda(p0) = d pi_delta / d delta at delta=0, and lambda'(p0).
//
// The four stylized families:
//   Additive        pi = min{1, p0 + delta}            lambda = 1{p0<1}
//   Multiplicative  pi = min{1, p0 e^delta}            lambda = p0 1{p0<1}
//   Equalizing      pi = min{1, 1-(1-p0)e^{-delta}}    lambda = 1-p0
//   Ipsi            pi = e^d p0 / (1-p0+e^d p0)        lambda = p0(1-p0)
// Ipsi multiplies everyone's treatment odds by e^delta.
class InterventionFamily {
 public:
  enum class Kind { Additive, Multiplicative, Equalizing, Ipsi, CustomLambda, Mtp };

  static InterventionFamily additive() { return InterventionFamily(Kind::Additive, "additive"); }
  static InterventionFamily multiplicative() {
    return InterventionFamily(Kind::Multiplicative, "multiplicative");
  }
  static InterventionFamily equalizing() {
    return InterventionFamily(Kind::Equalizing, "equalizing");
  }
  static InterventionFamily ipsi() { return InterventionFamily(Kind::Ipsi, "ipsi"); }

  // User-supplied lambda with an explicit derivative. pi_delta is the
  // first-order policy change p0 + delta*lambda(p0), capped to [0,1].
  static InterventionFamily custom(std::function<double(double)> lam,
                                   std::function<double(double)> lam_prime,
                                   std::string name = "custom") {
    InterventionFamily f(Kind::CustomLambda, std::move(name));
    f.custom_lambda_ = std::move(lam);
    f.custom_lambda_prime_ = std::move(lam_prime);
    return f;
  }

  // Modified treatment policy: stay(p0,delta) = Pr[A_delta=1 | A=1],
  // join(p0,delta) = Pr[A_delta=1 | A=0]. The derivative functions are the
  // d/d delta at delta=0 slices, supplied explicitly for the same reason
  // CustomLambda requires lambda'.
  static InterventionFamily mtp(std::function<double(double, double)> stay,
                                std::function<double(double, double)> join,
                                std::function<double(double)> stay_dot,
                                std::function<double(double)> join_dot,
                                std::string name = "mtp") {
    InterventionFamily f(Kind::Mtp, std::move(name));
    f.mtp_stay_ = std::move(stay);
    f.mtp_join_ = std::move(join);
    f.mtp_stay_dot_ = std::move(stay_dot);
    f.mtp_join_dot_ = std::move(join_dot);
    return f;
  }

  Kind kind() const { return kind_; }
  const std::string& name() const { return name_; }
  double delta_max() const { return delta_max_; }

  double pi_delta(double p0, double delta) const {
    check_p0(p0);
    if (delta < 0.0 || delta > delta_max_)
      throw domain_error("pi_delta: delta must lie in [0, " + std::to_string(delta_max_) + "]");
    switch (kind_) {
      case Kind::Additive:
        return std::min(1.0, p0 + delta);
      case Kind::Multiplicative:
        return std::min(1.0, p0 * std::exp(delta));
      case Kind::Equalizing:
        return std::min(1.0, 1.0 - (1.0 - p0) * std::exp(-delta));
      case Kind::Ipsi: {
        const double ed = std::exp(delta);
        return ed * p0 / (1.0 - p0 + ed * p0);
      }
      case Kind::CustomLambda:
        return std::clamp(p0 + delta * custom_lambda_(p0), 0.0, 1.0);
      case Kind::Mtp:
        return p0 * mtp_stay_(p0, delta) + (1.0 - p0) * mtp_join_(p0, delta);
    }
    throw domain_error("pi_delta: unknown family kind");
  }

  double lambda(double p0) const {
    check_p0(p0);
    switch (kind_) {
      case Kind::Additive:
        return p0 < 1.0 ? 1.0 : 0.0;
      case Kind::Multiplicative:
        return p0 < 1.0 ? p0 : 0.0;
      case Kind::Equalizing:
        return 1.0 - p0;
      case Kind::Ipsi:
        return p0 * (1.0 - p0);
      case Kind::CustomLambda:
        return custom_lambda_(p0);
      case Kind::Mtp:
        return p0 * mtp_stay_dot_(p0) + (1.0 - p0) * mtp_join_dot_(p0);
    }
    throw domain_error("lambda: unknown family kind");
  }

  double lambda_prime(double p0) const {
    check_p0(p0);
    switch (kind_) {
      case Kind::Additive:
        if (p0 >= 1.0) throw kink_error("lambda_prime additive: kink at p0 = 1");
        return 0.0;
      case Kind::Multiplicative:
        if (p0 >= 1.0) throw kink_error("lambda_prime multiplicative: kink at p0 = 1");
        return 1.0;
      case Kind::Equalizing:
        if (p0 >= 1.0) throw kink_error("lambda_prime equalizing: kink at p0 = 1");
        return -1.0;
      case Kind::Ipsi:
        return 1.0 - 2.0 * p0;
      case Kind::CustomLambda:
        return custom_lambda_prime_(p0);
      case Kind::Mtp:
        throw domain_error("lambda_prime is not available for MTP families");
    }
    throw domain_error("lambda_prime: unknown family kind");
  }

 private:
  InterventionFamily(Kind k, std::string name) : kind_(k), name_(std::move(name)) {}

  static void check_p0(double p0) {
    if (!(p0 >= 0.0 && p0 <= 1.0))
      throw domain_error("propensity argument " + std::to_string(p0) + " outside [0,1]");
  }

  Kind kind_;
  std::string name_;
  double delta_max_ = 5.0;
  std::function<double(double)> custom_lambda_;
  std::function<double(double)> custom_lambda_prime_;
  std::function<double(double, double)> mtp_stay_;
  std::function<double(double, double)> mtp_join_;
  std::function<double(double)> mtp_stay_dot_;
  std::function<double(double)> mtp_join_dot_;
};

// Forward difference (pi_h(p0) - p0)/h; agrees with lambda(p0) to O(h) and is
// the independent check that lambda really is the delta-derivative at 0.
inline double finite_difference_check(const InterventionFamily& family, double p0, double h) {
  if (!(h > 0.0)) throw domain_error("finite_difference_check: h must be > 0");
  return (family.pi_delta(p0, h) - p0) / h;
}

}  // namespace mie
