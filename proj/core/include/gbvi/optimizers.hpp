#pragma once

#include "gbvi/estimators.hpp"
#include "gbvi/schedules.hpp"
#include "gbvi/targets.hpp"
#include "gbvi/types.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace gbvi {

/// Geometric iterate averaging attached to a run. `noise_quadratic` and
/// `gamma` fix the decay ratio theta; the applicable index range follows the
/// algorithm (prox averages w^1..w^T, proj averages w^0..w^{T-1}).
struct AveragingSpec {
  double noise_quadratic = 0.0;
  double gamma = 0.0;
};

struct OptimizerSpec {
  Algorithm algorithm = Algorithm::ProxSgd;
  EstimatorKind estimator = EstimatorKind::Energy;
  StepSchedule schedule = StepSchedule::constant(1.0);
  std::optional<NonDegeneracyLevel> level;  // required for ProjSgd
  std::int64_t iterations = 0;
  std::uint64_t seed = 0;
  int minibatch = 1;
  std::optional<AveragingSpec> averaging;
  bool store_iterates = false;
  std::int64_t record_every = 1;
  /// When >= 0, iterates w^{t+1} with t+1 >= this index are folded into a
  /// uniform running mean (used for high-precision reference solutions).
  std::int64_t tail_average_start = -1;
};

/// One recorded trajectory row. Optional fields are filled by the metric
/// hook (reference distances, ELBO estimates); the loop itself records the
/// stepsize, the squared norm of the drawn estimate, and wall time.
struct RunRecord {
  std::int64_t t = 0;
  double gamma = 0.0;
  std::optional<double> dist_sq_to_ref;
  std::optional<double> kl_to_ref;
  std::optional<double> elbo_mc;
  std::optional<double> elbo_se;
  double grad_sq_norm = 0.0;
  double wall_ms = 0.0;
};

struct Trajectory {
  Algorithm algorithm = Algorithm::ProxSgd;
  std::vector<VariationalParams> iterates;  // w^0..w^T when stored
  std::vector<RunRecord> metrics;
  VariationalParams final_params;
  std::optional<VariationalParams> averaged;
  std::optional<VariationalParams> tail_average;
};

/// Called for every recorded row, after the loop fills the built-in fields.
using MetricHook =
    std::function<void(std::int64_t t, const VariationalParams& w, RunRecord& row)>;

/// Proximal stochastic gradient loop over triangular factors: gradient step
/// with the Energy estimator, then the closed-form entropy prox. Every
/// iterate keeps a strictly positive diagonal.
Trajectory prox_sgd_run(const VariationalParams& initial, const TargetModel& model,
                        const OptimizerSpec& spec, const MetricHook& hook = {});

/// Projected stochastic gradient loop over symmetric factors: gradient step
/// with the Entropy or Stl estimator, explicit symmetrization, then the
/// eigenvalue clamp at 1/sqrt(M). Every iterate stays non-degenerate.
Trajectory proj_sgd_run(const VariationalParams& initial, const TargetModel& model,
                        const OptimizerSpec& spec, const MetricHook& hook = {});

/// Weighted average of stored iterates over the algorithm's averaging range:
/// weight k applies to w^{k+1} for prox runs and to w^k for proj runs.
VariationalParams averaged_iterate(const Trajectory& trajectory,
                                   std::span<const double> weights);

}  // namespace gbvi
