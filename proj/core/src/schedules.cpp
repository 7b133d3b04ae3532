#include "gbvi/schedules.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace gbvi {

namespace {

double require_positive(double v, const char* name) {
  if (!(v > 0.0)) {
    throw std::invalid_argument(std::string(name) + " must be > 0");
  }
  return v;
}

}  // namespace

double bound_quadratic(EstimatorKind kind, Eigen::Index dim, double smoothness,
                       double residual_smoothness) {
  if (dim <= 0) throw std::invalid_argument("bound_quadratic: dim must be positive");
  const double M = require_positive(smoothness, "smoothness");
  const double dim_term = static_cast<double>(dim) + 3.0;
  switch (kind) {
    case EstimatorKind::Energy:
      return 2.0 * dim_term * M * M;
    case EstimatorKind::Entropy:
      return 4.0 * dim_term * M * M;
    case EstimatorKind::Stl: {
      const double K = residual_smoothness;
      if (K < 0.0) throw std::invalid_argument("residual_smoothness must be >= 0");
      return 4.0 * dim_term * (K * K + 2.0 * M * M);
    }
  }
  throw std::invalid_argument("unknown estimator kind");
}

QuadBound quad_bound(EstimatorKind kind, const BoundInputs& in,
                     VariationalParams anchor) {
  if (in.dim <= 0) throw std::invalid_argument("quad_bound: dim must be positive");
  const double d = static_cast<double>(in.dim);
  const double M = require_positive(in.smoothness, "smoothness");
  const double dim_term = d + 3.0;

  auto map_dist_sq = [&]() -> double {
    if (in.dist_sq_to_map) {
      if (*in.dist_sq_to_map < 0.0) {
        throw std::invalid_argument("dist_sq_to_map must be >= 0");
      }
      return *in.dist_sq_to_map;
    }
    if (in.strong_concavity && *in.strong_concavity > 0.0) {
      return d / *in.strong_concavity;  // |w* - (MAP,0)|^2 <= d/mu
    }
    throw std::invalid_argument(
        "quad_bound: dist_sq_to_map is required (no strong concavity to bound it)");
  };

  QuadBound bound;
  bound.anchor = std::move(anchor);
  switch (kind) {
    case EstimatorKind::Energy: {
      bound.quadratic = bound_quadratic(kind, in.dim, M);
      bound.offset = 2.0 * dim_term * M * M * map_dist_sq();
      bound.validity = BoundValidity::Anywhere;
      return bound;
    }
    case EstimatorKind::Entropy: {
      if (!in.entropy_level) {
        throw std::invalid_argument("quad_bound(Entropy): entropy_level is required");
      }
      const double L = require_positive(*in.entropy_level, "entropy_level");
      bound.quadratic = bound_quadratic(kind, in.dim, M);
      bound.offset = 4.0 * dim_term * M * M * map_dist_sq() + d * L;
      bound.validity = BoundValidity::NondegenerateL;
      bound.level = L;
      return bound;
    }
    case EstimatorKind::Stl: {
      if (!in.residual_smoothness) {
        throw std::invalid_argument("quad_bound(Stl): residual_smoothness is required");
      }
      const double K = *in.residual_smoothness;
      bound.quadratic = bound_quadratic(kind, in.dim, M, K);
      if (K == 0.0) {
        bound.offset = 0.0;
      } else {
        if (!in.dist_sq_to_residual_point) {
          throw std::invalid_argument(
              "quad_bound(Stl): dist_sq_to_residual_point is required when K > 0");
        }
        if (*in.dist_sq_to_residual_point < 0.0) {
          throw std::invalid_argument("dist_sq_to_residual_point must be >= 0");
        }
        bound.offset = 4.0 * dim_term * K * K * *in.dist_sq_to_residual_point;
      }
      bound.validity = BoundValidity::NondegenerateM;
      bound.level = M;
      return bound;
    }
  }
  throw std::invalid_argument("unknown estimator kind");
}

StepSchedule StepSchedule::constant(double gamma) {
  StepSchedule s;
  s.rule_ = Rule::Constant;
  s.gamma_ = require_positive(gamma, "gamma");
  return s;
}

StepSchedule StepSchedule::decaying_prox(double mu, double noise_quadratic) {
  StepSchedule s;
  s.rule_ = Rule::DecayingProx;
  s.mu_ = require_positive(mu, "mu");
  s.quadratic_ = require_positive(noise_quadratic, "noise_quadratic");
  return s;
}

StepSchedule StepSchedule::decaying_proj(double mu, double noise_quadratic) {
  StepSchedule s;
  s.rule_ = Rule::DecayingProj;
  s.mu_ = require_positive(mu, "mu");
  s.quadratic_ = require_positive(noise_quadratic, "noise_quadratic");
  return s;
}

double StepSchedule::at(std::int64_t t) const {
  if (t < 0) throw std::invalid_argument("stepsize index must be >= 0");
  const double tf = static_cast<double>(t);
  switch (rule_) {
    case Rule::Constant:
      return gamma_;
    case Rule::DecayingProx:
      return std::min(mu_ / (2.0 * quadratic_),
                      (1.0 / mu_) * (2.0 * tf + 1.0) / ((tf + 1.0) * (tf + 1.0)));
    case Rule::DecayingProj:
      return std::min(mu_ / (2.0 * quadratic_),
                      (2.0 / mu_) * (2.0 * tf + 1.0) / ((tf + 1.0) * (tf + 1.0)));
  }
  throw std::logic_error("unknown schedule rule");
}

double constant_stepsize_for_horizon(Algorithm setting, double noise_quadratic,
                                     std::int64_t horizon) {
  require_positive(noise_quadratic, "noise_quadratic");
  if (horizon < 2) {
    throw std::invalid_argument("horizon-tuned stepsizes require T >= 2");
  }
  const double root = std::sqrt(noise_quadratic * static_cast<double>(horizon));
  return setting == Algorithm::ProxSgd ? 1.0 / root : std::numbers::sqrt2 / root;
}

double log_horizon_stepsize(double scale, std::int64_t horizon,
                            double noise_quadratic, double mu) {
  require_positive(scale, "scale");
  require_positive(mu, "mu");
  require_positive(noise_quadratic, "noise_quadratic");
  if (horizon < 2) throw std::invalid_argument("log-horizon stepsize requires T >= 2");
  const double T = static_cast<double>(horizon);
  if (T / std::log(T) < 2.0 * noise_quadratic * scale / mu) {
    throw std::invalid_argument(
        "log-horizon stepsize: T / log(T) must be >= 2 a scale / mu");
  }
  return scale * std::log(T) / T;
}

std::vector<double> averaging_weights(Algorithm setting, double noise_quadratic,
                                      double gamma, std::int64_t horizon) {
  if (noise_quadratic < 0.0) {
    throw std::invalid_argument("noise_quadratic must be >= 0");
  }
  require_positive(gamma, "gamma");
  if (horizon < 1) throw std::invalid_argument("averaging needs horizon >= 1");
  const double factor = setting == Algorithm::ProxSgd ? 2.0 : 1.0;
  const double theta = 1.0 / (1.0 + factor * noise_quadratic * gamma * gamma);

  std::vector<double> weights(static_cast<std::size_t>(horizon));
  // Weights are theta^{t+1} over the theorem's index range; both ranges have
  // length T and the same geometric profile, so normalization is shared.
  double w = theta;
  if (setting == Algorithm::ProxSgd) w *= theta;  // range starts at t = 1
  double total = 0.0;
  for (auto& entry : weights) {
    entry = w;
    total += w;
    w *= theta;
  }
  for (auto& entry : weights) entry /= total;
  return weights;
}

RateEnvelope::RateEnvelope(Kind kind, std::string description,
                           std::function<double(std::int64_t)> eval)
    : kind_(kind), description_(std::move(description)), eval_(std::move(eval)) {}

RateEnvelope rate_envelope(RateTheorem theorem, const EnvelopeInputs& in) {
  const double gamma = in.gamma;
  const double mu = in.mu;
  const double a = in.noise_quadratic;
  const double b = in.noise_offset;
  const double M = in.smoothness;
  const double map_sq = in.dist_sq_to_map;
  const double init_sq = in.initial_dist_sq;
  if (init_sq < 0.0 || b < 0.0 || map_sq < 0.0) {
    throw std::invalid_argument("envelope constants must be nonnegative");
  }

  auto check_gamma = [&](double cap, const char* what) {
    require_positive(gamma, "gamma");
    if (gamma > cap * (1.0 + 1e-12)) {
      throw std::invalid_argument(std::string("stepsize violates ") + what);
    }
  };

  switch (theorem) {
    case RateTheorem::ProxStrong: {
      require_positive(mu, "mu");
      require_positive(a, "noise_quadratic");
      check_gamma(std::min(mu / (2.0 * a), 1.0 / mu), "gamma <= min{mu/2a, 1/mu}");
      const double floor = (2.0 * gamma / mu) * (b + M * M * map_sq);
      return RateEnvelope(RateEnvelope::Kind::GeometricPlusFloor,
                          "prox-sgd, strongly convex, constant stepsize",
                          [=](std::int64_t t) {
                            return std::pow(1.0 - gamma * mu, static_cast<double>(t)) *
                                       init_sq +
                                   floor;
                          });
    }
    case RateTheorem::ProxStrongAnytime: {
      require_positive(mu, "mu");
      require_positive(a, "noise_quadratic");
      const double lead = std::floor(a / (mu * mu));
      const double noise = b + M * M * map_sq;
      return RateEnvelope(RateEnvelope::Kind::AnytimeQuadratic,
                          "prox-sgd, strongly convex, decaying stepsize",
                          [=](std::int64_t t) {
                            const double T = static_cast<double>(std::max<std::int64_t>(t, 1));
                            return 16.0 * lead * lead / (T * T) * init_sq +
                                   8.0 / (mu * mu * T) * noise;
                          });
    }
    case RateTheorem::ProjStrong: {
      require_positive(mu, "mu");
      require_positive(a, "noise_quadratic");
      check_gamma(std::min(mu / (2.0 * a), 2.0 / mu), "gamma <= min{mu/2a, 2/mu}");
      const double floor = 2.0 * gamma * b / mu;
      return RateEnvelope(RateEnvelope::Kind::GeometricPlusFloor,
                          "proj-sgd, strongly convex, constant stepsize",
                          [=](std::int64_t t) {
                            return std::pow(1.0 - 0.5 * mu * gamma,
                                            static_cast<double>(t)) *
                                       init_sq +
                                   floor;
                          });
    }
    case RateTheorem::ProjStrongAnytime: {
      require_positive(mu, "mu");
      require_positive(a, "noise_quadratic");
      return RateEnvelope(RateEnvelope::Kind::AnytimeQuadratic,
                          "proj-sgd, strongly convex, decaying stepsize",
                          [=](std::int64_t t) {
                            const double T = static_cast<double>(std::max<std::int64_t>(t, 1));
                            return 32.0 * a / (mu * mu * T * T) * init_sq +
                                   16.0 * b / (mu * mu * T);
                          });
    }
    case RateTheorem::ProxConvexAvg: {
      require_positive(a, "noise_quadratic");
      return RateEnvelope(RateEnvelope::Kind::AveragedSqrtT,
                          "prox-sgd, convex, averaged iterate, horizon stepsize",
                          [=](std::int64_t t) {
                            const double T = static_cast<double>(std::max<std::int64_t>(t, 1));
                            return (2.0 * a * init_sq + b) / std::sqrt(a * T);
                          });
    }
    case RateTheorem::ProjConvexAvg: {
      require_positive(a, "noise_quadratic");
      return RateEnvelope(RateEnvelope::Kind::AveragedSqrtT,
                          "proj-sgd, convex, averaged iterate, horizon stepsize",
                          [=](std::int64_t t) {
                            const double T = static_cast<double>(std::max<std::int64_t>(t, 1));
                            return std::sqrt(2.0 * a / T) * init_sq +
                                   b / std::sqrt(2.0 * a * T);
                          });
    }
    case RateTheorem::GaussianStlGeometric: {
      require_positive(mu, "mu");
      require_positive(a, "noise_quadratic");
      check_gamma(std::min(mu / (2.0 * a), 2.0 / mu), "gamma <= min{mu/2a, 2/mu}");
      return RateEnvelope(RateEnvelope::Kind::GeometricPlusFloor,
                          "proj-sgd + stl on a Gaussian target: pure geometric decay",
                          [=](std::int64_t t) {
                            return std::pow(1.0 - 0.5 * mu * gamma,
                                            static_cast<double>(t)) *
                                   init_sq;
                          });
    }
  }
  throw std::invalid_argument("unknown rate theorem");
}

}  // namespace gbvi
