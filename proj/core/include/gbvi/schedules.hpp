#pragma once

#include "gbvi/estimators.hpp"
#include "gbvi/types.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace gbvi {

/// Which composite update an optimizer runs: a proximal step against the
/// negative entropy, or a projection onto the non-degeneracy set.
enum class Algorithm { ProxSgd, ProjSgd };

/// Where a quadratic noise bound is valid.
enum class BoundValidity { Anywhere, NondegenerateL, NondegenerateM };

/// E |g|^2 <= quadratic * |w - anchor|^2 + offset, valid on `validity`
/// (level carries L or M for the non-degenerate regions).
struct QuadBound {
  double quadratic = 0.0;
  double offset = 0.0;
  VariationalParams anchor;
  BoundValidity validity = BoundValidity::Anywhere;
  double level = 0.0;
};

/// Inputs to quad_bound. Every entry the requested estimator needs must be
/// present; missing ones raise std::invalid_argument naming the constant.
/// When strong_concavity > 0 is given, an unknown squared distance to the
/// MAP anchor may be replaced by the dim/mu bound automatically.
struct BoundInputs {
  Eigen::Index dim = 0;
  double smoothness = 0.0;                          // M
  std::optional<double> strong_concavity;           // mu
  std::optional<double> residual_smoothness;        // K (0 for Gaussian targets)
  std::optional<double> entropy_level;              // L for the Entropy region
  std::optional<double> dist_sq_to_map;             // |w* - (MAP, 0)|^2
  std::optional<double> dist_sq_to_residual_point;  // |w* - (resid. stat., 0)|^2
};

QuadBound quad_bound(EstimatorKind kind, const BoundInputs& in,
                     VariationalParams anchor);

/// The distance coefficient of the noise bound alone. It never depends on
/// anchor distances, so stepsizes can be derived before a reference exists.
/// residual_smoothness is only read for the Stl estimator.
double bound_quadratic(EstimatorKind kind, Eigen::Index dim, double smoothness,
                       double residual_smoothness = 0.0);

/// Stepsize rule gamma_t. The decaying rules are constant at mu/(2*quadratic)
/// until the (2t+1)/(t+1)^2 tail drops below it.
class StepSchedule {
 public:
  enum class Rule { Constant, DecayingProx, DecayingProj };

  static StepSchedule constant(double gamma);
  static StepSchedule decaying_prox(double mu, double noise_quadratic);
  static StepSchedule decaying_proj(double mu, double noise_quadratic);

  double at(std::int64_t t) const;
  Rule rule() const { return rule_; }
  double constant_gamma() const { return gamma_; }
  double mu() const { return mu_; }
  double noise_quadratic() const { return quadratic_; }

 private:
  Rule rule_ = Rule::Constant;
  double gamma_ = 0.0;
  double mu_ = 0.0;
  double quadratic_ = 0.0;
};

/// Horizon-tuned constant stepsize: 1/sqrt(a T) for the proximal setting,
/// sqrt(2)/sqrt(a T) for the projected one. Requires T >= 2.
double constant_stepsize_for_horizon(Algorithm setting, double noise_quadratic,
                                     std::int64_t horizon);

/// log(T)/T constant-stepsize preset: gamma = scale * log(T) / T, with the
/// validity requirement T / log(T) >= 2 * a * scale / mu checked up front.
double log_horizon_stepsize(double scale, std::int64_t horizon,
                            double noise_quadratic, double mu);

/// Normalized geometric averaging weights. For the proximal setting the
/// K-th weight (K = 0..T-1) applies to iterate w^{K+1}; for the projected
/// setting it applies to w^K. theta is 1/(1+2 a gamma^2) (prox) or
/// 1/(1+a gamma^2) (proj); a = 0 gives uniform weights.
std::vector<double> averaging_weights(Algorithm setting, double noise_quadratic,
                                      double gamma, std::int64_t horizon);

enum class RateTheorem {
  ProxStrong,
  ProxStrongAnytime,
  ProjStrong,
  ProjStrongAnytime,
  ProxConvexAvg,
  ProjConvexAvg,
  GaussianStlGeometric,
};

/// Constants feeding a rate envelope; each theorem validates the subset it
/// uses. `initial_dist_sq` is |w^0 - w*|^2, `dist_sq_to_map` is
/// |w* - (MAP, 0)|^2.
struct EnvelopeInputs {
  double gamma = 0.0;
  double mu = 0.0;
  double noise_quadratic = 0.0;  // a
  double noise_offset = 0.0;     // b
  double smoothness = 0.0;       // M
  double dist_sq_to_map = 0.0;
  double initial_dist_sq = 0.0;
};

/// An evaluable theoretical upper bound: on E |w^t - w*|^2 for the strong
/// variants, on the expected objective gap of the averaged iterate for the
/// convex ones.
class RateEnvelope {
 public:
  enum class Kind { GeometricPlusFloor, AnytimeQuadratic, AveragedSqrtT };

  RateEnvelope(Kind kind, std::string description,
               std::function<double(std::int64_t)> eval);

  double operator()(std::int64_t t) const { return eval_(t); }
  Kind kind() const { return kind_; }
  const std::string& description() const { return description_; }

 private:
  Kind kind_;
  std::string description_;
  std::function<double(std::int64_t)> eval_;
};

RateEnvelope rate_envelope(RateTheorem theorem, const EnvelopeInputs& in);

}  // namespace gbvi
