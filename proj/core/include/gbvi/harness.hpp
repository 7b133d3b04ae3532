#pragma once

#include "gbvi/optimizers.hpp"
#include "gbvi/schedules.hpp"
#include "gbvi/targets.hpp"

#include "json.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gbvi {

/// Raised for malformed or inconsistent configuration documents; the CLI
/// maps it to its configuration-error exit code.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// How the reference optimum used for distance metrics is obtained.
struct ReferenceSpec {
  enum class Kind { Auto, Analytic, LongRun, None };
  Kind kind = Kind::Auto;
  std::int64_t iterations = 0;  // LongRun budget
  std::uint64_t seed = 0;
  double tail_fraction = 0.1;  // uniform tail average of the long run
};

/// Diagnostic sampling: per-recorded-row objective estimates (0 = off) and
/// the sample count used for the final averaged-iterate objective.
struct DiagnosticsSpec {
  int elbo_samples = 0;
  int final_elbo_samples = 2000;
};

/// Grid settings for the noise-bound verification.
struct BoundsCheckSpec {
  int points = 50;
  int samples = 20000;
  std::uint64_t seed = 1234;
  double mean_radius = 1.0;
  double factor_scale_range = 0.75;  // factor scalings drawn from e^{±range}
};

/// A fully resolved experiment: model, optimizer, initial point, run and
/// diagnostic settings. Produced by load_config / parse_config; the raw
/// document is kept for hashing and echo.
struct ExperimentConfig {
  nlohmann::json raw;
  std::string model_kind;
  TargetModel model;
  OptimizerSpec optimizer;
  VariationalParams initial;
  int replications = 1;
  DiagnosticsSpec diagnostics;
  std::filesystem::path output_dir;
  ReferenceSpec reference;
  BoundsCheckSpec bounds_check;
};

/// Parse a config document. Unknown keys anywhere are errors. Relative CSV
/// paths resolve against base_dir.
ExperimentConfig parse_config(const nlohmann::json& document,
                              const std::filesystem::path& base_dir);
ExperimentConfig load_config(const std::filesystem::path& path);

/// FNV-1a hash of the canonical dump of a config document, as fixed-width hex.
std::string config_hash(const nlohmann::json& document);

/// Numeric matrix from CSV, columns = data points, header row optional.
Eigen::MatrixXd load_csv_matrix(const std::filesystem::path& path);

/// Trajectory CSV, one row per recorded iteration. The header is
/// `t,gamma,dist_sq_to_ref,kl_to_ref,elbo_mc,elbo_se,grad_sq_norm,wall_ms`;
/// absent optionals serialize as empty fields and floats as shortest
/// round-trip decimals.
void write_run_csv(const std::filesystem::path& path, std::span<const RunRecord> rows);
std::vector<RunRecord> read_run_csv(const std::filesystem::path& path);

/// Monte-Carlo objective value: sampled expectation of -log p over the
/// variational distribution plus the exact negative entropy. For targets
/// with an exact reference, `exact_gap` carries the closed-form gap to the
/// optimum.
struct ElboEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::optional<double> exact_gap;
};
ElboEstimate elbo_gap(const VariationalParams& w, const TargetModel& model,
                      int n_samples, const RngStream& stream);

/// Run the configured experiment: `replications` independent trajectories
/// (seeds base, base+1, ...), per-run CSVs and a summary document with
/// per-iteration mean/SE of the reference distance, the final
/// averaged-iterate objective, and the matching theoretical envelope when
/// one applies. Files go to output_dir unless it is empty.
nlohmann::json run_experiment(const ExperimentConfig& config, int threads = 0);

/// Noise-bound verification over a grid of feasible parameters around the
/// reference, for the estimator configured in `config`.
struct BoundsPoint {
  double dist_sq = 0.0;
  double measured = 0.0;
  double std_error = 0.0;
  double bound = 0.0;
  double margin = 0.0;  // allowed - measured; >= 0 passes
  bool pass = false;
};
struct BoundsReport {
  EstimatorKind estimator = EstimatorKind::Energy;
  double quadratic = 0.0;
  double offset = 0.0;
  bool reference_exact = true;
  std::vector<BoundsPoint> points;
  bool pass = false;
  nlohmann::json to_json() const;
};
BoundsReport check_bounds(const ExperimentConfig& config, int threads = 0);

/// Least-squares slope of log(metric) against log(horizon).
struct RatePoint {
  double horizon = 0.0;
  double metric = 0.0;
};
struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_std_error = 0.0;
  double conf_low = 0.0;
  double conf_high = 0.0;
  int points = 0;
};
RateFit fit_rate(std::span<const RatePoint> points);

/// Assemble rate points from summary documents. metric = "dist" reads the
/// final mean squared distance; "gap" reads the final averaged-iterate
/// objective relative to the best value observed across all documents
/// (including `baseline` ones, which anchor the best value but are not fit).
RateFit fit_rate_from_summaries(const std::vector<nlohmann::json>& summaries,
                                const std::string& metric,
                                const std::vector<nlohmann::json>& baseline = {});

}  // namespace gbvi
