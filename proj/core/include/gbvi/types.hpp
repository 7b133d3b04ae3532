#pragma once

#include <Eigen/Core>

#include <cstdint>

namespace gbvi {

/// Vector subspace the covariance factor is constrained to live in.
/// LowerTriangular factors have exact zeros strictly above the diagonal;
/// Symmetric factors satisfy C(i,j) == C(j,i) exactly.
enum class FactorSpace { LowerTriangular, Symmetric };

/// Parameters of a dense Gaussian family: mean m and covariance factor C,
/// so the covariance is C * C^T.
struct VariationalParams {
  Eigen::VectorXd mean;
  Eigen::MatrixXd factor;
  FactorSpace space = FactorSpace::LowerTriangular;

  Eigen::Index dim() const { return mean.size(); }
};

/// A gradient (or gradient estimate) living in the tangent space of
/// VariationalParams: a mean block and a factor block.
struct GradientEstimate {
  Eigen::VectorXd mean_grad;
  Eigen::MatrixXd factor_grad;

  /// Stacked squared norm: |g_m|^2 + |g_C|_F^2.
  double squared_norm() const {
    return mean_grad.squaredNorm() + factor_grad.squaredNorm();
  }
};

/// Smoothness level M defining the non-degeneracy constraint
/// sigma_min(C) >= 1/sqrt(M).
struct NonDegeneracyLevel {
  double smoothness = 1.0;

  double min_singular_value() const;
};

/// Parameter-space norms use the stacked Euclidean convention throughout:
/// |w|^2 = |m|^2 + |C|_F^2.
double squared_param_norm(const VariationalParams& w);
double squared_param_distance(const VariationalParams& a, const VariationalParams& b);

}  // namespace gbvi
