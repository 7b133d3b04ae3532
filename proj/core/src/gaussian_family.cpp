#include "gbvi/gaussian_family.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace gbvi {

namespace {

void require_square(const VariationalParams& w) {
  if (w.factor.rows() != w.factor.cols() || w.factor.rows() != w.mean.size()) {
    throw std::invalid_argument("factor must be d x d with d = len(mean)");
  }
}

double log_det_triangular(const Eigen::MatrixXd& C) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < C.rows(); ++i) acc += std::log(C(i, i));
  return acc;
}

}  // namespace

double NonDegeneracyLevel::min_singular_value() const {
  if (!(smoothness > 0.0)) {
    throw std::invalid_argument("non-degeneracy level requires smoothness > 0");
  }
  return 1.0 / std::sqrt(smoothness);
}

double squared_param_norm(const VariationalParams& w) {
  return w.mean.squaredNorm() + w.factor.squaredNorm();
}

double squared_param_distance(const VariationalParams& a, const VariationalParams& b) {
  if (a.dim() != b.dim()) {
    throw std::invalid_argument("parameter distance: dimension mismatch");
  }
  return (a.mean - b.mean).squaredNorm() + (a.factor - b.factor).squaredNorm();
}

Eigen::MatrixXd project_factor_space(const Eigen::MatrixXd& X, FactorSpace space) {
  if (X.rows() != X.cols()) {
    throw std::invalid_argument("project_factor_space expects a square matrix");
  }
  switch (space) {
    case FactorSpace::LowerTriangular:
      return X.triangularView<Eigen::Lower>();
    case FactorSpace::Symmetric:
      return 0.5 * (X + X.transpose());
  }
  throw std::invalid_argument("unknown factor space");
}

bool in_factor_space(const Eigen::MatrixXd& X, FactorSpace space) {
  if (X.rows() != X.cols()) return false;
  switch (space) {
    case FactorSpace::LowerTriangular:
      for (Eigen::Index j = 1; j < X.cols(); ++j)
        for (Eigen::Index i = 0; i < j; ++i)
          if (X(i, j) != 0.0) return false;
      return true;
    case FactorSpace::Symmetric:
      for (Eigen::Index j = 0; j < X.cols(); ++j)
        for (Eigen::Index i = 0; i < j; ++i)
          if (X(i, j) != X(j, i)) return false;
      return true;
  }
  return false;
}

bool is_positive_definite(const VariationalParams& w) {
  require_square(w);
  switch (w.space) {
    case FactorSpace::LowerTriangular:
      return (w.factor.diagonal().array() > 0.0).all();
    case FactorSpace::Symmetric: {
      Eigen::LLT<Eigen::MatrixXd> llt(w.factor);
      return llt.info() == Eigen::Success;
    }
  }
  return false;
}

Eigen::VectorXd transform(const VariationalParams& w, const Eigen::VectorXd& u) {
  require_square(w);
  if (u.size() != w.dim()) {
    throw std::invalid_argument("transform: base sample has wrong dimension");
  }
  return w.factor * u + w.mean;
}

double log_q(const VariationalParams& w, const Eigen::VectorXd& z) {
  require_square(w);
  if (z.size() != w.dim()) {
    throw std::invalid_argument("log_q: point has wrong dimension");
  }
  const double d = static_cast<double>(w.dim());
  const Eigen::VectorXd centered = z - w.mean;
  double log_det_factor;
  double quad;
  switch (w.space) {
    case FactorSpace::LowerTriangular: {
      if (!is_positive_definite(w)) {
        throw std::domain_error("log_q: triangular factor is not positive definite");
      }
      log_det_factor = log_det_triangular(w.factor);
      quad = w.factor.triangularView<Eigen::Lower>().solve(centered).squaredNorm();
      break;
    }
    case FactorSpace::Symmetric: {
      Eigen::LLT<Eigen::MatrixXd> llt(w.factor);
      if (llt.info() != Eigen::Success) {
        throw std::domain_error("log_q: symmetric factor is not positive definite");
      }
      log_det_factor = 2.0 * log_det_triangular(llt.matrixL());
      quad = llt.solve(centered).squaredNorm();
      break;
    }
    default:
      throw std::invalid_argument("unknown factor space");
  }
  return -0.5 * d * std::log(2.0 * std::numbers::pi) - log_det_factor - 0.5 * quad;
}

double neg_entropy(const VariationalParams& w) {
  require_square(w);
  if (!in_factor_space(w.factor, w.space) || !is_positive_definite(w)) {
    return std::numeric_limits<double>::infinity();
  }
  switch (w.space) {
    case FactorSpace::LowerTriangular:
      return -log_det_triangular(w.factor);
    case FactorSpace::Symmetric: {
      Eigen::LLT<Eigen::MatrixXd> llt(w.factor);
      return -2.0 * log_det_triangular(llt.matrixL());
    }
  }
  return std::numeric_limits<double>::infinity();
}

GradientEstimate neg_entropy_gradient(const VariationalParams& w) {
  require_square(w);
  const Eigen::Index d = w.dim();
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(d, d);
  Eigen::MatrixXd inv_transpose;
  switch (w.space) {
    case FactorSpace::LowerTriangular: {
      if (!is_positive_definite(w)) {
        throw std::domain_error("neg_entropy_gradient: singular triangular factor");
      }
      // C^{-T} = (C^T)^{-1}, obtained from an upper-triangular solve.
      inv_transpose = w.factor.transpose().triangularView<Eigen::Upper>().solve(id);
      break;
    }
    case FactorSpace::Symmetric: {
      Eigen::LLT<Eigen::MatrixXd> llt(w.factor);
      if (llt.info() != Eigen::Success) {
        throw std::domain_error("neg_entropy_gradient: factor is not positive definite");
      }
      inv_transpose = llt.solve(id);
      break;
    }
    default:
      throw std::invalid_argument("unknown factor space");
  }
  return GradientEstimate{Eigen::VectorXd::Zero(d),
                          -project_factor_space(inv_transpose, w.space)};
}

VariationalParams prox_neg_entropy(const VariationalParams& w, double gamma) {
  require_square(w);
  if (w.space != FactorSpace::LowerTriangular) {
    throw std::invalid_argument("prox_neg_entropy is defined for triangular factors");
  }
  if (!(gamma > 0.0)) {
    throw std::invalid_argument("prox_neg_entropy requires gamma > 0");
  }
  VariationalParams out = w;
  for (Eigen::Index i = 0; i < out.factor.rows(); ++i) {
    const double c = out.factor(i, i);
    // Conjugate form for negative entries: the direct formula cancels
    // catastrophically there and can round the result to zero.
    out.factor(i, i) = c >= 0.0
                           ? 0.5 * (c + std::sqrt(c * c + 4.0 * gamma))
                           : 2.0 * gamma / (std::sqrt(c * c + 4.0 * gamma) - c);
  }
  return out;
}

VariationalParams project_nondegenerate(const VariationalParams& w,
                                        const NonDegeneracyLevel& level) {
  require_square(w);
  if (w.space != FactorSpace::Symmetric) {
    throw std::invalid_argument("project_nondegenerate is defined for symmetric factors");
  }
  const double floor = level.min_singular_value();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(w.factor);
  if (eig.info() != Eigen::Success) {
    throw std::runtime_error("project_nondegenerate: eigendecomposition failed");
  }
  Eigen::VectorXd clamped = eig.eigenvalues().cwiseMax(floor);
  VariationalParams out = w;
  out.factor = eig.eigenvectors() * clamped.asDiagonal() * eig.eigenvectors().transpose();
  // Recomposition is symmetric only up to rounding; restore exact symmetry.
  out.factor = project_factor_space(out.factor, FactorSpace::Symmetric);
  return out;
}

double kl_gaussian(const VariationalParams& w, const VariationalParams& w_star) {
  require_square(w);
  require_square(w_star);
  if (w.dim() != w_star.dim()) {
    throw std::invalid_argument("kl_gaussian: dimension mismatch");
  }
  if (!is_positive_definite(w) || !is_positive_definite(w_star)) {
    throw std::domain_error("kl_gaussian requires both factors positive definite");
  }
  const double d = static_cast<double>(w.dim());

  auto log_det_factor = [](const VariationalParams& p) {
    if (p.space == FactorSpace::LowerTriangular) return log_det_triangular(p.factor);
    Eigen::LLT<Eigen::MatrixXd> llt(p.factor);
    return 2.0 * log_det_triangular(llt.matrixL());
  };
  // Solves C*^{-1} X through the factor of the reference distribution.
  auto star_solve = [&](const Eigen::MatrixXd& rhs) -> Eigen::MatrixXd {
    if (w_star.space == FactorSpace::LowerTriangular) {
      return w_star.factor.triangularView<Eigen::Lower>().solve(rhs);
    }
    Eigen::LLT<Eigen::MatrixXd> llt(w_star.factor);
    return llt.solve(rhs);  // symmetric factor: C*^{-1} rhs
  };

  // tr(Sigma*^{-1} Sigma) = |C*^{-1} C|_F^2 and the quadratic mean term is
  // |C*^{-1}(m* - m)|^2, both computed without forming Sigma inverses.
  const double trace_term = star_solve(w.factor).squaredNorm();
  const double mean_term = star_solve(w_star.mean - w.mean).squaredNorm();
  const double log_det_ratio = 2.0 * (log_det_factor(w_star) - log_det_factor(w));
  return 0.5 * (log_det_ratio - d + trace_term + mean_term);
}

}  // namespace gbvi
