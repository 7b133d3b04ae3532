#include "gbvi/optimizers.hpp"

#include "gbvi/gaussian_family.hpp"

#include <cassert>
#include <chrono>
#include <cmath>
#include <stdexcept>

namespace gbvi {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

void validate_spec(const OptimizerSpec& spec) {
  if (spec.iterations < 0) throw std::invalid_argument("iterations must be >= 0");
  if (spec.minibatch < 1) throw std::invalid_argument("minibatch must be >= 1");
  if (spec.record_every < 1) throw std::invalid_argument("record_every must be >= 1");
  if (spec.algorithm == Algorithm::ProxSgd) {
    if (spec.estimator != EstimatorKind::Energy) {
      throw std::invalid_argument("prox-sgd runs with the Energy estimator");
    }
  } else {
    if (spec.estimator != EstimatorKind::Entropy && spec.estimator != EstimatorKind::Stl) {
      throw std::invalid_argument("proj-sgd runs with the Entropy or Stl estimator");
    }
    if (!spec.level) {
      throw std::invalid_argument("proj-sgd requires a non-degeneracy level");
    }
  }
}

/// Running geometric-weight average: absorb(w) is called once per iterate of
/// the averaging range, in order.
class RunningAverage {
 public:
  RunningAverage(Eigen::Index d, FactorSpace space, double theta, double first_weight)
      : theta_(theta), weight_(first_weight) {
    sum_.mean = Eigen::VectorXd::Zero(d);
    sum_.factor = Eigen::MatrixXd::Zero(d, d);
    sum_.space = space;
  }

  void absorb(const VariationalParams& w) {
    sum_.mean += weight_ * w.mean;
    sum_.factor += weight_ * w.factor;
    total_ += weight_;
    weight_ *= theta_;
  }

  VariationalParams value() const {
    VariationalParams out = sum_;
    out.mean /= total_;
    out.factor /= total_;
    return out;
  }

  bool empty() const { return total_ == 0.0; }

 private:
  VariationalParams sum_;
  double theta_;
  double weight_;
  double total_ = 0.0;
};

struct LoopContext {
  const TargetModel& model;
  const OptimizerSpec& spec;
  const MetricHook& hook;
  Trajectory traj;
  RngStream run_stream;
  Clock::time_point start = Clock::now();

  LoopContext(const TargetModel& m, const OptimizerSpec& s, const MetricHook& h)
      : model(m), spec(s), hook(h), run_stream(s.seed) {}

  bool should_record(std::int64_t t) const {
    return t == 0 || t == spec.iterations || t % spec.record_every == 0;
  }

  void record(std::int64_t t, const VariationalParams& w, double grad_sq_norm) {
    RunRecord row;
    row.t = t;
    row.gamma = spec.schedule.at(t);
    row.grad_sq_norm = grad_sq_norm;
    row.wall_ms = elapsed_ms(start);
    if (hook) hook(t, w, row);
    traj.metrics.push_back(std::move(row));
  }
};

GradientEstimate step_estimate(LoopContext& ctx, const VariationalParams& w,
                               std::int64_t t) {
  return minibatch_estimate(ctx.spec.estimator, w, ctx.model, ctx.spec.minibatch,
                            ctx.run_stream.substream(static_cast<std::uint64_t>(t)));
}

/// Uniform running mean over iterates w^s with s >= start.
class TailAverage {
 public:
  TailAverage(Eigen::Index d, FactorSpace space, std::int64_t start) : start_(start) {
    sum_.mean = Eigen::VectorXd::Zero(d);
    sum_.factor = Eigen::MatrixXd::Zero(d, d);
    sum_.space = space;
  }

  void absorb(std::int64_t index, const VariationalParams& w) {
    if (index < start_) return;
    sum_.mean += w.mean;
    sum_.factor += w.factor;
    count_ += 1.0;
  }

  std::optional<VariationalParams> value() const {
    if (count_ == 0.0) return std::nullopt;
    VariationalParams out = sum_;
    out.mean /= count_;
    out.factor /= count_;
    return out;
  }

 private:
  VariationalParams sum_;
  std::int64_t start_;
  double count_ = 0.0;
};

std::optional<RunningAverage> make_average(const OptimizerSpec& spec, Eigen::Index d,
                                           FactorSpace space) {
  if (!spec.averaging) return std::nullopt;
  const double factor = spec.algorithm == Algorithm::ProxSgd ? 2.0 : 1.0;
  const double g = spec.averaging->gamma;
  const double theta = 1.0 / (1.0 + factor * spec.averaging->noise_quadratic * g * g);
  // Prox averages w^1..w^T with weights theta^2..theta^{T+1}; proj averages
  // w^0..w^{T-1} with weights theta^1..theta^T. Normalization cancels the
  // leading power so only the starting exponent differs.
  const double first = spec.algorithm == Algorithm::ProxSgd ? theta * theta : theta;
  return RunningAverage(d, space, theta, first);
}

}  // namespace

Trajectory prox_sgd_run(const VariationalParams& initial, const TargetModel& model,
                        const OptimizerSpec& spec, const MetricHook& hook) {
  validate_spec(spec);
  if (spec.algorithm != Algorithm::ProxSgd) {
    throw std::invalid_argument("prox_sgd_run called with a proj-sgd spec");
  }
  if (initial.space != FactorSpace::LowerTriangular) {
    throw std::invalid_argument("prox-sgd requires lower-triangular factors");
  }
  if (!in_factor_space(initial.factor, FactorSpace::LowerTriangular) ||
      !is_positive_definite(initial)) {
    throw std::invalid_argument("prox-sgd initial factor must be triangular with positive diagonal");
  }
  if (model.dim() != initial.dim()) {
    throw std::invalid_argument("model/initial dimension mismatch");
  }

  LoopContext ctx(model, spec, hook);
  ctx.traj.algorithm = Algorithm::ProxSgd;
  VariationalParams w = initial;
  auto average = make_average(spec, w.dim(), w.space);
  std::optional<TailAverage> tail;
  if (spec.tail_average_start >= 0) tail.emplace(w.dim(), w.space, spec.tail_average_start);
  if (spec.store_iterates) ctx.traj.iterates.push_back(w);

  for (std::int64_t t = 0; t < spec.iterations; ++t) {
    const double gamma = spec.schedule.at(t);
    const GradientEstimate g = step_estimate(ctx, w, t);
    if (ctx.should_record(t)) ctx.record(t, w, g.squared_norm());

    w.mean -= gamma * g.mean_grad;
    w.factor -= gamma * g.factor_grad;
    w = prox_neg_entropy(w, gamma);
    assert((w.factor.diagonal().array() > 0.0).all());

    if (average) average->absorb(w);
    if (tail) tail->absorb(t + 1, w);
    if (spec.store_iterates) ctx.traj.iterates.push_back(w);
  }
  // Final row: a fresh diagnostic estimate from the unused substream T.
  ctx.record(spec.iterations, w, step_estimate(ctx, w, spec.iterations).squared_norm());
  if (average && !average->empty()) ctx.traj.averaged = average->value();
  if (tail) ctx.traj.tail_average = tail->value();
  ctx.traj.final_params = std::move(w);
  return ctx.traj;
}

Trajectory proj_sgd_run(const VariationalParams& initial, const TargetModel& model,
                        const OptimizerSpec& spec, const MetricHook& hook) {
  validate_spec(spec);
  if (spec.algorithm != Algorithm::ProjSgd) {
    throw std::invalid_argument("proj_sgd_run called with a prox-sgd spec");
  }
  if (initial.space != FactorSpace::Symmetric) {
    throw std::invalid_argument("proj-sgd requires symmetric factors");
  }
  if (model.dim() != initial.dim()) {
    throw std::invalid_argument("model/initial dimension mismatch");
  }
  const NonDegeneracyLevel level = *spec.level;

  LoopContext ctx(model, spec, hook);
  ctx.traj.algorithm = Algorithm::ProjSgd;
  // A user-supplied start may sit outside the feasible set; project it in.
  VariationalParams w{initial.mean,
                      project_factor_space(initial.factor, FactorSpace::Symmetric),
                      FactorSpace::Symmetric};
  w = project_nondegenerate(w, level);
  auto average = make_average(spec, w.dim(), w.space);
  std::optional<TailAverage> tail;
  if (spec.tail_average_start >= 0) tail.emplace(w.dim(), w.space, spec.tail_average_start);
  if (spec.store_iterates) ctx.traj.iterates.push_back(w);

  for (std::int64_t t = 0; t < spec.iterations; ++t) {
    const double gamma = spec.schedule.at(t);
    const GradientEstimate g = step_estimate(ctx, w, t);
    if (ctx.should_record(t)) ctx.record(t, w, g.squared_norm());
    if (average) average->absorb(w);

    w.mean -= gamma * g.mean_grad;
    w.factor -= gamma * g.factor_grad;
    w.factor = 0.5 * (w.factor + w.factor.transpose().eval());
    w = project_nondegenerate(w, level);

    if (tail) tail->absorb(t + 1, w);
    if (spec.store_iterates) ctx.traj.iterates.push_back(w);
  }
  ctx.record(spec.iterations, w, step_estimate(ctx, w, spec.iterations).squared_norm());
  if (average && !average->empty()) ctx.traj.averaged = average->value();
  if (tail) ctx.traj.tail_average = tail->value();
  ctx.traj.final_params = std::move(w);
  return ctx.traj;
}

VariationalParams averaged_iterate(const Trajectory& trajectory,
                                   std::span<const double> weights) {
  if (trajectory.iterates.empty()) {
    throw std::invalid_argument("averaged_iterate needs stored iterates");
  }
  const std::size_t total = trajectory.iterates.size();  // w^0..w^T
  if (weights.size() != total - 1) {
    throw std::invalid_argument("averaged_iterate: weight count must equal T");
  }
  // Prox runs average w^1..w^T, proj runs average w^0..w^{T-1}.
  const std::size_t offset = trajectory.algorithm == Algorithm::ProxSgd ? 1 : 0;
  const auto& first = trajectory.iterates.front();
  VariationalParams out{Eigen::VectorXd::Zero(first.dim()),
                        Eigen::MatrixXd::Zero(first.dim(), first.dim()), first.space};
  double sum = 0.0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    const auto& w = trajectory.iterates[k + offset];
    out.mean += weights[k] * w.mean;
    out.factor += weights[k] * w.factor;
    sum += weights[k];
  }
  if (!(sum > 0.0)) throw std::invalid_argument("averaging weights must sum to > 0");
  out.mean /= sum;
  out.factor /= sum;
  return out;
}

}  // namespace gbvi
