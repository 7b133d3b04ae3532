#pragma once

#include "gbvi/types.hpp"

namespace gbvi {

/// Orthogonal projection onto the factor subspace: tril(X) for
/// LowerTriangular, (X + X^T)/2 for Symmetric. Idempotent and self-adjoint.
Eigen::MatrixXd project_factor_space(const Eigen::MatrixXd& X, FactorSpace space);

/// Exact membership test for the declared subspace (no tolerance).
bool in_factor_space(const Eigen::MatrixXd& X, FactorSpace space);

/// Positive-definiteness in the declared representation. Triangular factors
/// are positive definite iff every diagonal entry is > 0; symmetric factors
/// are checked by attempting a Cholesky factorization.
bool is_positive_definite(const VariationalParams& w);

/// Affine reparameterization z = C u + m.
Eigen::VectorXd transform(const VariationalParams& w, const Eigen::VectorXd& u);

/// Log density of N(m, C C^T) at z, computed through solves against C
/// (triangular substitution or a Cholesky factorization, never an explicit
/// inverse). Requires C positive definite.
double log_q(const VariationalParams& w, const Eigen::VectorXd& z);

/// Negative entropy up to its additive constant: -log det C when C is
/// positive definite in its subspace, +infinity otherwise. Total on all
/// inputs; the infinite value is the out-of-domain signal, not an error.
double neg_entropy(const VariationalParams& w);

/// Gradient of the negative entropy: (0, -proj_V(C^{-T})).
GradientEstimate neg_entropy_gradient(const VariationalParams& w);

/// Proximal step of the negative entropy for triangular factors. The mean
/// and the off-diagonal entries pass through; each diagonal entry becomes
/// (C_ii + sqrt(C_ii^2 + 4*gamma)) / 2, which is strictly positive for any
/// input, so the output is always positive definite.
VariationalParams prox_neg_entropy(const VariationalParams& w, double gamma);

/// Euclidean projection onto the non-degeneracy set for symmetric factors:
/// eigenvalues of C are clamped from below at 1/sqrt(M). Negative
/// eigenvalues are clamped up like any other.
VariationalParams project_nondegenerate(const VariationalParams& w,
                                        const NonDegeneracyLevel& level);

/// KL divergence between N(m, CC^T) and N(m*, C*C*^T), in closed form.
/// Nonnegative, zero iff the two distributions coincide.
double kl_gaussian(const VariationalParams& w, const VariationalParams& w_star);

}  // namespace gbvi
