#pragma once

#include "gbvi/rng.hpp"
#include "gbvi/targets.hpp"
#include "gbvi/types.hpp"

#include <memory>

namespace gbvi {

/// The three reparameterization gradient estimators. Energy estimates the
/// gradient of the expected negative log target only; Entropy and Stl
/// estimate the gradient of the full objective (expected negative log target
/// plus negative entropy).
///
/// A fourth variant one might expect -- sampling the entropy term without
/// holding the parameters fixed under differentiation -- collapses to the
/// closed-form entropy gradient for Gaussian families (the sampled log
/// density at the reparameterized point has a u-independent parameter
/// gradient), so only these three are provided.
enum class EstimatorKind { Energy, Entropy, Stl };

/// Holds a factorization of the covariance factor C so repeated products
/// with C^{-T} (and the matrix C^{-T} itself) come from solves rather than
/// explicit inverses. Construction throws std::domain_error when the
/// required positive definiteness fails.
class FactorSolver {
 public:
  explicit FactorSolver(const VariationalParams& w);

  Eigen::VectorXd solve_transpose(const Eigen::VectorXd& rhs) const;

  /// C^{-T}, materialized on first use and cached.
  const Eigen::MatrixXd& inverse_transpose() const;

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;
};

/// One estimate from a single base draw u ~ N(0, I). Energy accepts any
/// factor; Entropy and Stl require C positive definite. The factor block of
/// the result is projected onto the declared subspace.
GradientEstimate draw_estimate(EstimatorKind kind, const VariationalParams& w,
                               const TargetModel& model, const Eigen::VectorXd& u);

/// Same, against a prepared solver (used by the Monte-Carlo loops and the
/// optimizers so the factorization of C is done once per parameter value).
GradientEstimate draw_estimate(EstimatorKind kind, const VariationalParams& w,
                               const TargetModel& model, const Eigen::VectorXd& u,
                               const FactorSolver* solver);

/// Mean of `batch_size` estimates with base draws from substreams 0, ...,
/// batch_size-1 of `stream`.
GradientEstimate minibatch_estimate(EstimatorKind kind, const VariationalParams& w,
                                    const TargetModel& model, int batch_size,
                                    const RngStream& stream);

/// Sample average over n_samples i.i.d. base draws; sample i uses
/// stream.substream(i), so the result is a pure function of the stream key.
GradientEstimate mc_mean(EstimatorKind kind, const VariationalParams& w,
                         const TargetModel& model, int n_samples,
                         const RngStream& stream);

/// Per-coordinate standard errors for the mc_mean at the same sample count
/// and stream (matching substream layout).
struct McMeanReport {
  GradientEstimate mean;
  GradientEstimate std_error;
};
McMeanReport mc_mean_with_errors(EstimatorKind kind, const VariationalParams& w,
                                 const TargetModel& model, int n_samples,
                                 const RngStream& stream);

/// Monte-Carlo estimate of E |g|^2 with its standard error.
struct MomentEstimate {
  double value = 0.0;
  double std_error = 0.0;
};
MomentEstimate mc_expected_sq_norm(EstimatorKind kind, const VariationalParams& w,
                                   const TargetModel& model, int n_samples,
                                   const RngStream& stream);

}  // namespace gbvi
