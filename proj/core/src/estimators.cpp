#include "gbvi/estimators.hpp"

#include "gbvi/gaussian_family.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <mutex>
#include <optional>
#include <stdexcept>

namespace gbvi {

struct FactorSolver::Impl {
  VariationalParams params;
  std::optional<Eigen::LLT<Eigen::MatrixXd>> llt;  // symmetric factors only
  mutable std::once_flag inverse_once;
  mutable Eigen::MatrixXd inverse_transpose;
};

FactorSolver::FactorSolver(const VariationalParams& w) : impl_(std::make_shared<Impl>()) {
  impl_->params = w;
  switch (w.space) {
    case FactorSpace::LowerTriangular:
      if (!(w.factor.diagonal().array() > 0.0).all()) {
        throw std::domain_error("estimator requires a positive definite factor");
      }
      break;
    case FactorSpace::Symmetric: {
      Eigen::LLT<Eigen::MatrixXd> llt(w.factor);
      if (llt.info() != Eigen::Success) {
        throw std::domain_error("estimator requires a positive definite factor");
      }
      impl_->llt = std::move(llt);
      break;
    }
  }
}

Eigen::VectorXd FactorSolver::solve_transpose(const Eigen::VectorXd& rhs) const {
  if (impl_->llt) return impl_->llt->solve(rhs);  // C symmetric: C^{-T} = C^{-1}
  return impl_->params.factor.transpose().triangularView<Eigen::Upper>().solve(rhs);
}

const Eigen::MatrixXd& FactorSolver::inverse_transpose() const {
  std::call_once(impl_->inverse_once, [this] {
    const Eigen::Index d = impl_->params.dim();
    const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(d, d);
    if (impl_->llt) {
      impl_->inverse_transpose = impl_->llt->solve(id);
    } else {
      impl_->inverse_transpose =
          impl_->params.factor.transpose().triangularView<Eigen::Upper>().solve(id);
    }
  });
  return impl_->inverse_transpose;
}

GradientEstimate draw_estimate(EstimatorKind kind, const VariationalParams& w,
                               const TargetModel& model, const Eigen::VectorXd& u,
                               const FactorSolver* solver) {
  if (u.size() != w.dim()) {
    throw std::invalid_argument("draw_estimate: base draw has wrong dimension");
  }
  if (model.dim() != w.dim()) {
    throw std::invalid_argument("draw_estimate: model/parameter dimension mismatch");
  }
  const Eigen::VectorXd pull = -model.grad_log_density(transform(w, u));

  switch (kind) {
    case EstimatorKind::Energy:
      return {pull, project_factor_space(pull * u.transpose(), w.space)};
    case EstimatorKind::Entropy: {
      std::optional<FactorSolver> local;
      if (!solver) local.emplace(w);
      const FactorSolver& s = solver ? *solver : *local;
      return {pull, project_factor_space(
                        pull * u.transpose() - s.inverse_transpose(), w.space)};
    }
    case EstimatorKind::Stl: {
      std::optional<FactorSolver> local;
      if (!solver) local.emplace(w);
      const FactorSolver& s = solver ? *solver : *local;
      const Eigen::VectorXd whitened = s.solve_transpose(u);
      return {pull - whitened,
              project_factor_space((pull - whitened) * u.transpose(), w.space)};
    }
  }
  throw std::invalid_argument("unknown estimator kind");
}

GradientEstimate draw_estimate(EstimatorKind kind, const VariationalParams& w,
                               const TargetModel& model, const Eigen::VectorXd& u) {
  return draw_estimate(kind, w, model, u, nullptr);
}

namespace {

std::optional<FactorSolver> solver_for(EstimatorKind kind, const VariationalParams& w) {
  if (kind == EstimatorKind::Energy) return std::nullopt;
  return FactorSolver(w);
}

}  // namespace

GradientEstimate minibatch_estimate(EstimatorKind kind, const VariationalParams& w,
                                    const TargetModel& model, int batch_size,
                                    const RngStream& stream) {
  if (batch_size < 1) throw std::invalid_argument("minibatch size must be >= 1");
  const auto solver = solver_for(kind, w);
  const Eigen::Index d = w.dim();
  GradientEstimate acc{Eigen::VectorXd::Zero(d), Eigen::MatrixXd::Zero(d, d)};
  for (int b = 0; b < batch_size; ++b) {
    RngStream sub = stream.substream(static_cast<std::uint64_t>(b));
    const GradientEstimate g =
        draw_estimate(kind, w, model, sub.next_gaussian_vector(d),
                      solver ? &*solver : nullptr);
    acc.mean_grad += g.mean_grad;
    acc.factor_grad += g.factor_grad;
  }
  acc.mean_grad /= static_cast<double>(batch_size);
  acc.factor_grad /= static_cast<double>(batch_size);
  return acc;
}

GradientEstimate mc_mean(EstimatorKind kind, const VariationalParams& w,
                         const TargetModel& model, int n_samples,
                         const RngStream& stream) {
  if (n_samples < 1) throw std::invalid_argument("mc_mean requires n_samples >= 1");
  return minibatch_estimate(kind, w, model, n_samples, stream);
}

McMeanReport mc_mean_with_errors(EstimatorKind kind, const VariationalParams& w,
                                 const TargetModel& model, int n_samples,
                                 const RngStream& stream) {
  if (n_samples < 2) throw std::invalid_argument("standard errors need n_samples >= 2");
  const auto solver = solver_for(kind, w);
  const Eigen::Index d = w.dim();
  GradientEstimate sum{Eigen::VectorXd::Zero(d), Eigen::MatrixXd::Zero(d, d)};
  GradientEstimate sum_sq{Eigen::VectorXd::Zero(d), Eigen::MatrixXd::Zero(d, d)};
  for (int i = 0; i < n_samples; ++i) {
    RngStream sub = stream.substream(static_cast<std::uint64_t>(i));
    const GradientEstimate g =
        draw_estimate(kind, w, model, sub.next_gaussian_vector(d),
                      solver ? &*solver : nullptr);
    sum.mean_grad += g.mean_grad;
    sum.factor_grad += g.factor_grad;
    sum_sq.mean_grad += g.mean_grad.cwiseAbs2();
    sum_sq.factor_grad += g.factor_grad.cwiseAbs2();
  }
  const double n = static_cast<double>(n_samples);
  McMeanReport report;
  report.mean = {sum.mean_grad / n, sum.factor_grad / n};
  auto se = [n](const auto& sq_sum, const auto& mean) {
    // Unbiased per-coordinate variance, clamped at zero against rounding.
    return ((((sq_sum / n) - mean.square()) * (n / (n - 1.0)) / n).max(0.0)).sqrt();
  };
  report.std_error = {
      se(sum_sq.mean_grad.array(), report.mean.mean_grad.array()).matrix(),
      se(sum_sq.factor_grad.array(), report.mean.factor_grad.array()).matrix()};
  return report;
}

MomentEstimate mc_expected_sq_norm(EstimatorKind kind, const VariationalParams& w,
                                   const TargetModel& model, int n_samples,
                                   const RngStream& stream) {
  if (n_samples < 2) throw std::invalid_argument("mc_expected_sq_norm needs n_samples >= 2");
  const auto solver = solver_for(kind, w);
  const Eigen::Index d = w.dim();
  double sum = 0.0;
  double sum_sq = 0.0;
  for (int i = 0; i < n_samples; ++i) {
    RngStream sub = stream.substream(static_cast<std::uint64_t>(i));
    const double v = draw_estimate(kind, w, model, sub.next_gaussian_vector(d),
                                   solver ? &*solver : nullptr)
                         .squared_norm();
    sum += v;
    sum_sq += v * v;
  }
  const double n = static_cast<double>(n_samples);
  const double mean = sum / n;
  const double var = std::max(0.0, (sum_sq / n - mean * mean) * n / (n - 1.0));
  return {mean, std::sqrt(var / n)};
}

}  // namespace gbvi
