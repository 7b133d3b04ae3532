#pragma once

#include "gbvi/types.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace gbvi {

/// Analytic structure of a log target: Lipschitz-smoothness M of
/// grad log p, strong concavity mu (0 encodes merely concave), and the
/// MAP point when known.
struct StructuralConstants {
  std::optional<double> smoothness;        // M
  std::optional<double> strong_concavity;  // mu
  std::optional<Eigen::VectorXd> map_point;
};

/// A known (exact or approximate) minimizer of the variational objective.
struct ReferenceSolution {
  VariationalParams optimum;
  bool exact = false;
};

/// A target distribution exposed through log p(z, x) and its z-gradient.
/// Models are immutable after construction and cheap to copy; evaluation is
/// pure and reentrant.
class TargetModel {
 public:
  using LogDensityFn = std::function<double(const Eigen::VectorXd&)>;
  using GradientFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
  using HessianFn = std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>;

  TargetModel(Eigen::Index dim, LogDensityFn log_density, GradientFn gradient,
              StructuralConstants constants = {}, HessianFn hessian = nullptr);

  Eigen::Index dim() const { return dim_; }
  double log_density(const Eigen::VectorXd& z) const;
  Eigen::VectorXd grad_log_density(const Eigen::VectorXd& z) const;

  bool has_hessian() const { return static_cast<bool>(hessian_); }
  Eigen::MatrixXd hessian_log_density(const Eigen::VectorXd& z) const;

  const StructuralConstants& constants() const { return constants_; }

  /// Reference optimum in the requested factor space, if one is attached.
  const std::optional<ReferenceSolution>& reference(FactorSpace space) const;
  void set_reference(ReferenceSolution reference);

 private:
  Eigen::Index dim_;
  LogDensityFn log_density_;
  GradientFn gradient_;
  HessianFn hessian_;
  StructuralConstants constants_;
  std::optional<ReferenceSolution> reference_triangular_;
  std::optional<ReferenceSolution> reference_symmetric_;
};

/// Gaussian target N(mean, covariance). Constants are the extreme
/// eigenvalues of the precision; the attached references (both factor
/// spaces) are exact.
TargetModel gaussian_target(const Eigen::VectorXd& mean,
                            const Eigen::MatrixXd& covariance);

/// Bayesian linear regression: z ~ N(0, prior_covariance),
/// x_n ~ N(z . a_n, noise_sigma^2) with a_n the columns of `design`.
TargetModel linear_regression_target(const Eigen::MatrixXd& design,
                                     const Eigen::VectorXd& observations,
                                     double noise_sigma,
                                     const Eigen::MatrixXd& prior_covariance);

/// Bayesian logistic regression with labels in {-1, +1}:
/// z ~ N(0, prior_covariance), P(x_n = 1 | z) = sigmoid(z . a_n).
TargetModel logistic_regression_target(const Eigen::MatrixXd& design,
                                       const Eigen::VectorXd& labels,
                                       const Eigen::MatrixXd& prior_covariance);

/// Hierarchical logistic regression over the stacked latent
/// (theta, z_1, ..., z_I): theta ~ N(0, sigma), z_i ~ N(theta, delta),
/// P(x_ij = 1 | z_i) = sigmoid(z_i . a_ij). The smoothness constant is a
/// conservative envelope assembled from the constant Gaussian blocks and the
/// 1/4 curvature cap of the logistic terms; the model is stored as merely
/// concave.
TargetModel hierarchical_logistic_target(Eigen::Index theta_dim,
                                         const std::vector<Eigen::MatrixXd>& group_designs,
                                         const std::vector<Eigen::VectorXd>& group_labels,
                                         const Eigen::MatrixXd& sigma,
                                         const Eigen::MatrixXd& delta);

/// MAP point of the model: the stored one when available, otherwise a damped
/// Newton solve to gradient norm <= 1e-8 (analytic Hessian when the model
/// carries one, central differences of the gradient otherwise). Throws with
/// the final gradient norm if the iteration cap is hit.
Eigen::VectorXd map_point(const TargetModel& model);

/// Numerically stable log(sigmoid(t)).
double log_sigmoid(double t);

}  // namespace gbvi
