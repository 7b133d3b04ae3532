#include "gbvi/targets.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <memory>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace gbvi {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454836;  // log(2*pi)

Eigen::LLT<Eigen::MatrixXd> checked_llt(const Eigen::MatrixXd& spd, const char* what) {
  if (spd.rows() != spd.cols()) {
    throw std::invalid_argument(std::string(what) + " must be square");
  }
  if (!spd.isApprox(spd.transpose())) {
    throw std::invalid_argument(std::string(what) + " must be symmetric");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(spd);
  if (llt.info() != Eigen::Success) {
    throw std::invalid_argument(std::string(what) + " must be positive definite");
  }
  return llt;
}

double log_det_from_llt(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  double acc = 0.0;
  const auto& L = llt.matrixLLT();
  for (Eigen::Index i = 0; i < L.rows(); ++i) acc += std::log(L(i, i));
  return 2.0 * acc;
}

/// Damped Newton ascent on log_density with backtracking line search.
Eigen::VectorXd newton_map(const TargetModel::LogDensityFn& log_density,
                           const TargetModel::GradientFn& gradient,
                           const TargetModel::HessianFn& hessian,
                           Eigen::VectorXd z, double tolerance, int max_iterations) {
  for (int iter = 0; iter < max_iterations; ++iter) {
    const Eigen::VectorXd g = gradient(z);
    if (g.norm() <= tolerance) return z;
    const Eigen::MatrixXd H = hessian(z);
    // Maximizing a concave function: -H is positive semidefinite. A tiny
    // ridge keeps the solve well posed on merely concave models.
    Eigen::MatrixXd neg_H = -H;
    neg_H.diagonal().array() += 1e-12;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(neg_H);
    Eigen::VectorXd step = ldlt.solve(g);
    if (!step.allFinite()) step = g;  // fall back to gradient ascent

    const double value = log_density(z);
    const double slope = g.dot(step);
    // Near the optimum the sufficient-decrease test sinks below rounding
    // noise; the allowance keeps full Newton steps acceptable there.
    const double noise = 1e-14 * (1.0 + std::abs(value));
    double alpha = 1.0;
    for (int bt = 0; bt < 60; ++bt) {
      const Eigen::VectorXd trial = z + alpha * step;
      if (log_density(trial) >= value + 1e-4 * alpha * slope - noise) {
        z = trial;
        break;
      }
      alpha *= 0.5;
    }
  }
  const double final_norm = gradient(z).norm();
  if (final_norm <= tolerance) return z;
  std::ostringstream msg;
  msg << "MAP solve did not converge: gradient norm " << final_norm
      << " after " << max_iterations << " iterations (tolerance " << tolerance << ")";
  throw std::runtime_error(msg.str());
}

}  // namespace

double log_sigmoid(double t) {
  // -log(1 + exp(-t)), computed on the side that cannot overflow.
  return t >= 0.0 ? -std::log1p(std::exp(-t)) : t - std::log1p(std::exp(t));
}

TargetModel::TargetModel(Eigen::Index dim, LogDensityFn log_density, GradientFn gradient,
                         StructuralConstants constants, HessianFn hessian)
    : dim_(dim),
      log_density_(std::move(log_density)),
      gradient_(std::move(gradient)),
      hessian_(std::move(hessian)),
      constants_(std::move(constants)) {
  if (dim_ <= 0) throw std::invalid_argument("target dimension must be positive");
  if (constants_.smoothness && constants_.strong_concavity &&
      *constants_.strong_concavity > *constants_.smoothness) {
    throw std::invalid_argument("strong concavity cannot exceed smoothness");
  }
}

double TargetModel::log_density(const Eigen::VectorXd& z) const {
  if (z.size() != dim_) throw std::invalid_argument("log_density: wrong dimension");
  return log_density_(z);
}

Eigen::VectorXd TargetModel::grad_log_density(const Eigen::VectorXd& z) const {
  if (z.size() != dim_) throw std::invalid_argument("grad_log_density: wrong dimension");
  return gradient_(z);
}

Eigen::MatrixXd TargetModel::hessian_log_density(const Eigen::VectorXd& z) const {
  if (!hessian_) throw std::logic_error("model carries no Hessian");
  return hessian_(z);
}

const std::optional<ReferenceSolution>& TargetModel::reference(FactorSpace space) const {
  return space == FactorSpace::LowerTriangular ? reference_triangular_
                                               : reference_symmetric_;
}

void TargetModel::set_reference(ReferenceSolution reference) {
  if (reference.optimum.dim() != dim_) {
    throw std::invalid_argument("reference dimension mismatch");
  }
  if (reference.optimum.space == FactorSpace::LowerTriangular) {
    reference_triangular_ = std::move(reference);
  } else {
    reference_symmetric_ = std::move(reference);
  }
}

TargetModel gaussian_target(const Eigen::VectorXd& mean,
                            const Eigen::MatrixXd& covariance) {
  const Eigen::Index d = mean.size();
  if (covariance.rows() != d || covariance.cols() != d) {
    throw std::invalid_argument("gaussian_target: covariance shape mismatch");
  }
  auto llt = std::make_shared<Eigen::LLT<Eigen::MatrixXd>>(
      checked_llt(covariance, "covariance"));

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(covariance);
  const Eigen::VectorXd cov_eigs = eig.eigenvalues();

  StructuralConstants constants;
  constants.smoothness = 1.0 / cov_eigs.minCoeff();
  constants.strong_concavity = 1.0 / cov_eigs.maxCoeff();
  constants.map_point = mean;

  const double log_norm =
      -0.5 * static_cast<double>(d) * kLogTwoPi - 0.5 * log_det_from_llt(*llt);
  const Eigen::MatrixXd precision_hessian = -llt->solve(Eigen::MatrixXd::Identity(d, d));

  TargetModel model(
      d,
      [mean, llt, log_norm](const Eigen::VectorXd& z) {
        const Eigen::VectorXd r = z - mean;
        return log_norm - 0.5 * r.dot(llt->solve(r));
      },
      [mean, llt](const Eigen::VectorXd& z) -> Eigen::VectorXd {
        return -llt->solve(z - mean);
      },
      constants,
      [precision_hessian](const Eigen::VectorXd&) { return precision_hessian; });

  // Exact optima: the variational family contains the target, so the optimum
  // is the target itself, factored per space.
  VariationalParams tri{mean, Eigen::MatrixXd(llt->matrixL()), FactorSpace::LowerTriangular};
  VariationalParams sym{mean, eig.operatorSqrt(), FactorSpace::Symmetric};
  sym.factor = 0.5 * (sym.factor + sym.factor.transpose().eval());
  model.set_reference(ReferenceSolution{std::move(tri), true});
  model.set_reference(ReferenceSolution{std::move(sym), true});
  return model;
}

TargetModel linear_regression_target(const Eigen::MatrixXd& design,
                                     const Eigen::VectorXd& observations,
                                     double noise_sigma,
                                     const Eigen::MatrixXd& prior_covariance) {
  const Eigen::Index d = design.rows();
  const Eigen::Index n = design.cols();
  if (observations.size() != n) {
    throw std::invalid_argument("linear_regression_target: label count mismatch");
  }
  if (!(noise_sigma > 0.0)) {
    throw std::invalid_argument("linear_regression_target: noise_sigma must be > 0");
  }
  auto prior_llt = std::make_shared<Eigen::LLT<Eigen::MatrixXd>>(
      checked_llt(prior_covariance, "prior covariance"));

  const double inv_var = 1.0 / (noise_sigma * noise_sigma);
  const Eigen::MatrixXd prior_precision =
      prior_llt->solve(Eigen::MatrixXd::Identity(d, d));
  const Eigen::MatrixXd posterior_precision =
      prior_precision + inv_var * (design * design.transpose());

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(posterior_precision);
  StructuralConstants constants;
  constants.strong_concavity = eig.eigenvalues().minCoeff();
  constants.smoothness = eig.eigenvalues().maxCoeff();
  constants.map_point = Eigen::VectorXd(
      Eigen::LLT<Eigen::MatrixXd>(posterior_precision)
          .solve(inv_var * (design * observations)));

  const double log_norm = -0.5 * static_cast<double>(d) * kLogTwoPi -
                          0.5 * log_det_from_llt(*prior_llt) -
                          0.5 * static_cast<double>(n) *
                              std::log(2.0 * std::numbers::pi * noise_sigma * noise_sigma);
  const Eigen::MatrixXd neg_precision = -posterior_precision;

  return TargetModel(
      d,
      [design, observations, prior_llt, inv_var, log_norm](const Eigen::VectorXd& z) {
        const Eigen::VectorXd residual = observations - design.transpose() * z;
        return log_norm - 0.5 * z.dot(prior_llt->solve(z)) -
               0.5 * inv_var * residual.squaredNorm();
      },
      [design, observations, prior_llt, inv_var](const Eigen::VectorXd& z) -> Eigen::VectorXd {
        return -prior_llt->solve(z) +
               inv_var * (design * (observations - design.transpose() * z));
      },
      constants,
      [neg_precision](const Eigen::VectorXd&) { return neg_precision; });
}

TargetModel logistic_regression_target(const Eigen::MatrixXd& design,
                                       const Eigen::VectorXd& labels,
                                       const Eigen::MatrixXd& prior_covariance) {
  const Eigen::Index d = design.rows();
  const Eigen::Index n = design.cols();
  if (labels.size() != n) {
    throw std::invalid_argument("logistic_regression_target: label count mismatch");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (labels[i] != 1.0 && labels[i] != -1.0) {
      throw std::invalid_argument("logistic_regression_target: labels must be +1 or -1");
    }
  }
  auto prior_llt = std::make_shared<Eigen::LLT<Eigen::MatrixXd>>(
      checked_llt(prior_covariance, "prior covariance"));
  const Eigen::MatrixXd prior_precision =
      prior_llt->solve(Eigen::MatrixXd::Identity(d, d));

  StructuralConstants constants;
  {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> prior_eig(prior_precision);
    constants.strong_concavity = prior_eig.eigenvalues().minCoeff();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> env_eig(
        prior_precision + 0.25 * (design * design.transpose()));
    constants.smoothness = env_eig.eigenvalues().maxCoeff();
  }

  const double log_norm =
      -0.5 * static_cast<double>(d) * kLogTwoPi - 0.5 * log_det_from_llt(*prior_llt);

  auto log_density = [design, labels, prior_llt, log_norm](const Eigen::VectorXd& z) {
    double acc = log_norm - 0.5 * z.dot(prior_llt->solve(z));
    const Eigen::VectorXd scores = design.transpose() * z;
    for (Eigen::Index i = 0; i < labels.size(); ++i) {
      acc += log_sigmoid(labels[i] * scores[i]);
    }
    return acc;
  };
  auto gradient = [design, labels, prior_llt](const Eigen::VectorXd& z) -> Eigen::VectorXd {
    const Eigen::VectorXd scores = design.transpose() * z;
    Eigen::VectorXd coeff(labels.size());
    for (Eigen::Index i = 0; i < labels.size(); ++i) {
      // d/ds log sigmoid(x s) = x * sigmoid(-x s)
      coeff[i] = labels[i] / (1.0 + std::exp(labels[i] * scores[i]));
    }
    return -prior_llt->solve(z) + design * coeff;
  };
  auto hessian = [design, labels, prior_precision](const Eigen::VectorXd& z) {
    const Eigen::VectorXd scores = design.transpose() * z;
    Eigen::VectorXd curv(labels.size());
    for (Eigen::Index i = 0; i < labels.size(); ++i) {
      const double s = 1.0 / (1.0 + std::exp(-labels[i] * scores[i]));
      curv[i] = s * (1.0 - s);
    }
    Eigen::MatrixXd H = -prior_precision;
    H -= design * curv.asDiagonal() * design.transpose();
    return H;
  };

  constants.map_point = newton_map(log_density, gradient, hessian,
                                   Eigen::VectorXd::Zero(d), 1e-10, 200);
  return TargetModel(d, std::move(log_density), std::move(gradient),
                     std::move(constants), std::move(hessian));
}

TargetModel hierarchical_logistic_target(Eigen::Index theta_dim,
                                         const std::vector<Eigen::MatrixXd>& group_designs,
                                         const std::vector<Eigen::VectorXd>& group_labels,
                                         const Eigen::MatrixXd& sigma,
                                         const Eigen::MatrixXd& delta) {
  const Eigen::Index p = theta_dim;
  const std::size_t groups = group_designs.size();
  if (groups == 0) throw std::invalid_argument("hierarchical target needs >= 1 group");
  if (group_labels.size() != groups) {
    throw std::invalid_argument("hierarchical target: group count mismatch");
  }
  for (std::size_t i = 0; i < groups; ++i) {
    if (group_designs[i].rows() != p) {
      throw std::invalid_argument("hierarchical target: design row dimension mismatch");
    }
    if (group_designs[i].cols() != group_labels[i].size()) {
      throw std::invalid_argument("hierarchical target: label count mismatch");
    }
    for (Eigen::Index j = 0; j < group_labels[i].size(); ++j) {
      if (group_labels[i][j] != 1.0 && group_labels[i][j] != -1.0) {
        throw std::invalid_argument("hierarchical target: labels must be +1 or -1");
      }
    }
  }
  auto sigma_llt = std::make_shared<Eigen::LLT<Eigen::MatrixXd>>(
      checked_llt(sigma, "sigma"));
  auto delta_llt = std::make_shared<Eigen::LLT<Eigen::MatrixXd>>(
      checked_llt(delta, "delta"));

  const Eigen::Index d = p * (1 + static_cast<Eigen::Index>(groups));
  const Eigen::MatrixXd sigma_prec = sigma_llt->solve(Eigen::MatrixXd::Identity(p, p));
  const Eigen::MatrixXd delta_prec = delta_llt->solve(Eigen::MatrixXd::Identity(p, p));

  // Conservative negative-Hessian envelope: the Gaussian chain blocks are
  // constant and the logistic curvature is capped at 1/4 per observation.
  Eigen::MatrixXd envelope = Eigen::MatrixXd::Zero(d, d);
  envelope.topLeftCorner(p, p) = sigma_prec + static_cast<double>(groups) * delta_prec;
  for (std::size_t i = 0; i < groups; ++i) {
    const Eigen::Index off = p * (1 + static_cast<Eigen::Index>(i));
    envelope.block(0, off, p, p) = -delta_prec;
    envelope.block(off, 0, p, p) = -delta_prec;
    envelope.block(off, off, p, p) =
        delta_prec + 0.25 * (group_designs[i] * group_designs[i].transpose());
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> env_eig(envelope);

  StructuralConstants constants;
  constants.smoothness = env_eig.eigenvalues().maxCoeff();
  constants.strong_concavity = 0.0;  // certified convex only

  const double gaussian_norm =
      -0.5 * static_cast<double>(p) * (1.0 + static_cast<double>(groups)) * kLogTwoPi -
      0.5 * log_det_from_llt(*sigma_llt) -
      0.5 * static_cast<double>(groups) * log_det_from_llt(*delta_llt);

  auto designs = std::make_shared<std::vector<Eigen::MatrixXd>>(group_designs);
  auto labels = std::make_shared<std::vector<Eigen::VectorXd>>(group_labels);

  auto log_density = [=](const Eigen::VectorXd& v) {
    const Eigen::VectorXd theta = v.head(p);
    double acc = gaussian_norm - 0.5 * theta.dot(sigma_llt->solve(theta));
    for (std::size_t i = 0; i < designs->size(); ++i) {
      const Eigen::VectorXd z = v.segment(p * (1 + static_cast<Eigen::Index>(i)), p);
      const Eigen::VectorXd r = z - theta;
      acc -= 0.5 * r.dot(delta_llt->solve(r));
      const Eigen::VectorXd scores = (*designs)[i].transpose() * z;
      for (Eigen::Index j = 0; j < scores.size(); ++j) {
        acc += log_sigmoid((*labels)[i][j] * scores[j]);
      }
    }
    return acc;
  };
  auto gradient = [=](const Eigen::VectorXd& v) -> Eigen::VectorXd {
    const Eigen::VectorXd theta = v.head(p);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(v.size());
    g.head(p) = -sigma_llt->solve(theta);
    for (std::size_t i = 0; i < designs->size(); ++i) {
      const Eigen::Index off = p * (1 + static_cast<Eigen::Index>(i));
      const Eigen::VectorXd z = v.segment(off, p);
      const Eigen::VectorXd pull = delta_llt->solve(z - theta);
      g.head(p) += pull;
      g.segment(off, p) = -pull;
      const Eigen::VectorXd scores = (*designs)[i].transpose() * z;
      Eigen::VectorXd coeff(scores.size());
      for (Eigen::Index j = 0; j < scores.size(); ++j) {
        coeff[j] = (*labels)[i][j] / (1.0 + std::exp((*labels)[i][j] * scores[j]));
      }
      g.segment(off, p) += (*designs)[i] * coeff;
    }
    return g;
  };
  auto hessian = [=](const Eigen::VectorXd& v) {
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(v.size(), v.size());
    H.topLeftCorner(p, p) =
        -(sigma_prec + static_cast<double>(designs->size()) * delta_prec);
    for (std::size_t i = 0; i < designs->size(); ++i) {
      const Eigen::Index off = p * (1 + static_cast<Eigen::Index>(i));
      const Eigen::VectorXd z = v.segment(off, p);
      H.block(0, off, p, p) = delta_prec;
      H.block(off, 0, p, p) = delta_prec;
      const Eigen::VectorXd scores = (*designs)[i].transpose() * z;
      Eigen::VectorXd curv(scores.size());
      for (Eigen::Index j = 0; j < scores.size(); ++j) {
        const double s = 1.0 / (1.0 + std::exp(-(*labels)[i][j] * scores[j]));
        curv[j] = s * (1.0 - s);
      }
      H.block(off, off, p, p) =
          -delta_prec - (*designs)[i] * curv.asDiagonal() * (*designs)[i].transpose();
    }
    return H;
  };

  constants.map_point = newton_map(log_density, gradient, hessian,
                                   Eigen::VectorXd::Zero(d), 1e-8, 200);
  return TargetModel(d, std::move(log_density), std::move(gradient),
                     std::move(constants), std::move(hessian));
}

Eigen::VectorXd map_point(const TargetModel& model) {
  if (model.constants().map_point) return *model.constants().map_point;
  TargetModel::HessianFn hessian;
  if (model.has_hessian()) {
    hessian = [&model](const Eigen::VectorXd& z) { return model.hessian_log_density(z); };
  } else {
    hessian = [&model](const Eigen::VectorXd& z) {
      const Eigen::Index d = model.dim();
      Eigen::MatrixXd H(d, d);
      for (Eigen::Index j = 0; j < d; ++j) {
        const double h = 1e-5 * (1.0 + std::abs(z[j]));
        Eigen::VectorXd lo = z, hi = z;
        lo[j] -= h;
        hi[j] += h;
        H.col(j) = (model.grad_log_density(hi) - model.grad_log_density(lo)) / (2.0 * h);
      }
      return Eigen::MatrixXd(0.5 * (H + H.transpose()));
    };
  }
  return newton_map(
      [&model](const Eigen::VectorXd& z) { return model.log_density(z); },
      [&model](const Eigen::VectorXd& z) { return model.grad_log_density(z); },
      hessian, Eigen::VectorXd::Zero(model.dim()), 1e-8, 200);
}

}  // namespace gbvi
