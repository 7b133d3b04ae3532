#include "gbvi/optimizers.hpp"

#include "gbvi/gaussian_family.hpp"
#include "gbvi/rng.hpp"

#include "doctest.h"

#include <Eigen/Eigenvalues>

#include <cmath>

using namespace gbvi;

namespace {

TargetModel standard_normal(Eigen::Index d) {
  return gaussian_target(Eigen::VectorXd::Zero(d), Eigen::MatrixXd::Identity(d, d));
}

OptimizerSpec prox_spec(double gamma, std::int64_t iterations, std::uint64_t seed) {
  OptimizerSpec spec;
  spec.algorithm = Algorithm::ProxSgd;
  spec.estimator = EstimatorKind::Energy;
  spec.schedule = StepSchedule::constant(gamma);
  spec.iterations = iterations;
  spec.seed = seed;
  return spec;
}

OptimizerSpec proj_spec(EstimatorKind estimator, double gamma, std::int64_t iterations,
                        std::uint64_t seed, double level) {
  OptimizerSpec spec;
  spec.algorithm = Algorithm::ProjSgd;
  spec.estimator = estimator;
  spec.schedule = StepSchedule::constant(gamma);
  spec.level = NonDegeneracyLevel{level};
  spec.iterations = iterations;
  spec.seed = seed;
  return spec;
}

}  // namespace

TEST_SUITE("optimizers") {

TEST_CASE("spec pairings are enforced") {
  const TargetModel model = standard_normal(2);
  const VariationalParams tri{Eigen::Vector2d::Zero(), Eigen::MatrixXd::Identity(2, 2),
                              FactorSpace::LowerTriangular};
  OptimizerSpec bad = prox_spec(0.1, 3, 1);
  bad.estimator = EstimatorKind::Stl;
  CHECK_THROWS_AS(prox_sgd_run(tri, model, bad), std::invalid_argument);

  OptimizerSpec no_level = proj_spec(EstimatorKind::Entropy, 0.1, 3, 1, 1.0);
  no_level.level.reset();
  const VariationalParams sym{Eigen::Vector2d::Zero(), Eigen::MatrixXd::Identity(2, 2),
                              FactorSpace::Symmetric};
  CHECK_THROWS_AS(proj_sgd_run(sym, model, no_level), std::invalid_argument);

  // Non-positive triangular start is rejected.
  const VariationalParams flat{Eigen::Vector2d::Zero(), Eigen::MatrixXd::Zero(2, 2),
                               FactorSpace::LowerTriangular};
  CHECK_THROWS_AS(prox_sgd_run(flat, model, prox_spec(0.1, 3, 1)),
                  std::invalid_argument);
}

TEST_CASE("prox step reproduces the estimator update exactly") {
  const TargetModel model = standard_normal(2);
  Eigen::MatrixXd C0(2, 2);
  C0 << 1.0, 0.0, 0.5, 1.0;
  const VariationalParams w0{Eigen::Vector2d(0.4, -0.3), C0,
                             FactorSpace::LowerTriangular};
  const double gamma = 0.07;
  OptimizerSpec spec = prox_spec(gamma, 1, 123);
  spec.store_iterates = true;
  const Trajectory traj = prox_sgd_run(w0, model, spec);
  REQUIRE(traj.iterates.size() == 2);

  // Re-derive the single step from the same substream.
  const GradientEstimate g = minibatch_estimate(
      EstimatorKind::Energy, w0, model, 1, RngStream(123).substream(0));
  const VariationalParams& w1 = traj.iterates[1];
  CHECK(w1.mean == Eigen::VectorXd(w0.mean - gamma * g.mean_grad));
  // Off-diagonals pass through the prox untouched.
  CHECK(w1.factor(1, 0) == C0(1, 0) - gamma * g.factor_grad(1, 0));
  CHECK(w1.factor(0, 1) == 0.0);
  for (int i = 0; i < 2; ++i) {
    const double c = C0(i, i) - gamma * g.factor_grad(i, i);
    CHECK(w1.factor(i, i) ==
          doctest::Approx(0.5 * (c + std::sqrt(c * c + 4 * gamma))).epsilon(1e-15));
  }
}

TEST_CASE("prox recovers from a vanishing diagonal") {
  // Start at (MAP, ~0): the pull term is negligible, the update is almost a
  // pure prox, and one step lifts the diagonal to ~sqrt(gamma).
  const TargetModel model = standard_normal(2);
  const double tiny = 1e-12;
  const VariationalParams w0{Eigen::Vector2d::Zero(),
                             tiny * Eigen::MatrixXd::Identity(2, 2),
                             FactorSpace::LowerTriangular};
  const double gamma = 0.04;
  OptimizerSpec spec = prox_spec(gamma, 1, 5);
  spec.store_iterates = true;
  const Trajectory traj = prox_sgd_run(w0, model, spec);
  for (int i = 0; i < 2; ++i) {
    CHECK(traj.iterates[1].factor(i, i) ==
          doctest::Approx(std::sqrt(gamma)).epsilon(1e-5));
  }
}

TEST_CASE("one-step mean of the m-coordinate matches the analytic expectation") {
  // Standard normal target, d = 1, w0 = (2, 1), gamma = 0.1:
  // E[m_1] = m - gamma * E[C u + m] = 2 - 0.1 * 2 = 1.8.
  const TargetModel model = standard_normal(1);
  const VariationalParams w0{Eigen::VectorXd::Constant(1, 2.0),
                             Eigen::MatrixXd::Identity(1, 1),
                             FactorSpace::LowerTriangular};
  const int runs = 100000;
  double sum = 0.0, sum_sq = 0.0;
  for (int r = 0; r < runs; ++r) {
    const Trajectory traj = prox_sgd_run(w0, model, prox_spec(0.1, 1, 1000 + r));
    const double m1 = traj.final_params.mean[0];
    sum += m1;
    sum_sq += m1 * m1;
  }
  const double mean = sum / runs;
  const double se = std::sqrt((sum_sq / runs - mean * mean) / runs);
  CHECK(std::abs(mean - 1.8) <= 5.0 * se);
}

TEST_CASE("proj-sgd stays put at the optimum with the cancelling estimator") {
  const TargetModel model = standard_normal(2);
  const VariationalParams w_star = model.reference(FactorSpace::Symmetric)->optimum;
  OptimizerSpec spec = proj_spec(EstimatorKind::Stl, 0.05, 25, 7, 1.0);
  spec.store_iterates = true;
  const Trajectory traj = proj_sgd_run(w_star, model, spec);
  for (const auto& w : traj.iterates) {
    CHECK(squared_param_distance(w, w_star) <= 1e-28);
  }
}

TEST_CASE("proj-sgd iterates stay in the non-degenerate set") {
  const TargetModel model = standard_normal(2);
  const NonDegeneracyLevel level{*model.constants().smoothness};
  const VariationalParams w0{Eigen::Vector2d(3, -2),
                             2.5 * Eigen::MatrixXd::Identity(2, 2),
                             FactorSpace::Symmetric};
  OptimizerSpec spec = proj_spec(EstimatorKind::Entropy, 0.02, 200, 11, level.smoothness);
  spec.store_iterates = true;
  const Trajectory traj = proj_sgd_run(w0, model, spec);
  REQUIRE(traj.iterates.size() == 201);
  for (const auto& w : traj.iterates) {
    CHECK(in_factor_space(w.factor, FactorSpace::Symmetric));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(w.factor);
    CHECK(eig.eigenvalues().minCoeff() >= level.min_singular_value() - 1e-12);
  }
  // An infeasible start is projected in before the first step.
  const VariationalParams squashed{Eigen::Vector2d::Zero(),
                                   0.01 * Eigen::MatrixXd::Identity(2, 2),
                                   FactorSpace::Symmetric};
  const Trajectory projected = proj_sgd_run(squashed, model, spec);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(projected.final_params.factor);
  CHECK(eig.eigenvalues().minCoeff() >= level.min_singular_value() - 1e-12);
}

TEST_CASE("identical specs give bit-identical trajectories") {
  const TargetModel model = standard_normal(3);
  const VariationalParams w0{Eigen::Vector3d(1, 2, 3),
                             Eigen::MatrixXd::Identity(3, 3),
                             FactorSpace::LowerTriangular};
  OptimizerSpec spec = prox_spec(0.05, 60, 99);
  spec.store_iterates = true;
  const Trajectory a = prox_sgd_run(w0, model, spec);
  const Trajectory b = prox_sgd_run(w0, model, spec);
  REQUIRE(a.iterates.size() == b.iterates.size());
  for (std::size_t i = 0; i < a.iterates.size(); ++i) {
    CHECK(a.iterates[i].mean == b.iterates[i].mean);
    CHECK(a.iterates[i].factor == b.iterates[i].factor);
  }
  REQUIRE(a.metrics.size() == b.metrics.size());
  for (std::size_t i = 0; i < a.metrics.size(); ++i) {
    CHECK(a.metrics[i].grad_sq_norm == b.metrics[i].grad_sq_norm);
  }
}

TEST_CASE("metrics grid includes both endpoints and respects record_every") {
  const TargetModel model = standard_normal(2);
  const VariationalParams w0{Eigen::Vector2d::Zero(), Eigen::MatrixXd::Identity(2, 2),
                             FactorSpace::LowerTriangular};
  OptimizerSpec spec = prox_spec(0.05, 10, 3);
  const Trajectory dense = prox_sgd_run(w0, model, spec);
  REQUIRE(dense.metrics.size() == 11);  // t = 0..10 inclusive
  for (std::int64_t t = 0; t <= 10; ++t) CHECK(dense.metrics[t].t == t);

  spec.record_every = 4;
  const Trajectory sparse = prox_sgd_run(w0, model, spec);
  REQUIRE(sparse.metrics.size() == 4);
  CHECK(sparse.metrics[0].t == 0);
  CHECK(sparse.metrics[1].t == 4);
  CHECK(sparse.metrics[2].t == 8);
  CHECK(sparse.metrics[3].t == 10);
}

TEST_CASE("averaged_iterate blends stored iterates") {
  VariationalParams w{Eigen::Vector2d(1, 1), Eigen::MatrixXd::Identity(2, 2),
                      FactorSpace::Symmetric};
  VariationalParams v{Eigen::Vector2d(4, -2),
                      (Eigen::MatrixXd(2, 2) << 2, 0.5, 0.5, 2).finished(),
                      FactorSpace::Symmetric};

  Trajectory constant;
  constant.algorithm = Algorithm::ProjSgd;
  constant.iterates = {w, w, w};  // w^0, w^1, w^2
  const std::vector<double> uniform{0.5, 0.5};
  const VariationalParams avg = averaged_iterate(constant, uniform);
  CHECK(avg.mean.isApprox(w.mean));
  CHECK(avg.factor.isApprox(w.factor));

  Trajectory two;
  two.algorithm = Algorithm::ProjSgd;
  two.iterates = {w, v, w};  // proj averages w^0, w^1
  const std::vector<double> weights{2.0 / 3.0, 1.0 / 3.0};
  const VariationalParams blend = averaged_iterate(two, weights);
  CHECK(blend.mean.isApprox(Eigen::Vector2d(2, 0)));
  CHECK(in_factor_space(blend.factor, FactorSpace::Symmetric));
  CHECK(blend.factor(0, 0) == doctest::Approx((2.0 * 1 + 1.0 * 2) / 3.0));

  // Prox indexing shifts the range to w^1..w^T.
  Trajectory prox_traj;
  prox_traj.algorithm = Algorithm::ProxSgd;
  prox_traj.iterates = {w, v, v};
  const VariationalParams prox_avg = averaged_iterate(prox_traj, uniform);
  CHECK(prox_avg.mean.isApprox(v.mean));

  CHECK_THROWS_AS(averaged_iterate(two, std::vector<double>{1.0}),
                  std::invalid_argument);
}

TEST_CASE("running average agrees with explicit weights over stored iterates") {
  const TargetModel model = standard_normal(2);
  const VariationalParams w0{Eigen::Vector2d(1.5, -0.5),
                             Eigen::MatrixXd::Identity(2, 2), FactorSpace::Symmetric};
  const double gamma = 0.03;
  const double a = 12.0;
  for (EstimatorKind kind : {EstimatorKind::Entropy, EstimatorKind::Stl}) {
    OptimizerSpec spec = proj_spec(kind, gamma, 40, 21, 1.0);
    spec.averaging = AveragingSpec{a, gamma};
    spec.store_iterates = true;
    const Trajectory traj = proj_sgd_run(w0, model, spec);
    REQUIRE(traj.averaged.has_value());
    const auto weights = averaging_weights(Algorithm::ProjSgd, a, gamma, 40);
    const VariationalParams expected = averaged_iterate(traj, weights);
    CHECK((traj.averaged->mean - expected.mean).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((traj.averaged->factor - expected.factor).cwiseAbs().maxCoeff() < 1e-12);
  }
  {
    OptimizerSpec spec = prox_spec(gamma, 40, 22);
    spec.averaging = AveragingSpec{a, gamma};
    spec.store_iterates = true;
    const VariationalParams tri0{Eigen::Vector2d(1.5, -0.5),
                                 Eigen::MatrixXd::Identity(2, 2),
                                 FactorSpace::LowerTriangular};
    const Trajectory traj = prox_sgd_run(tri0, model, spec);
    REQUIRE(traj.averaged.has_value());
    const auto weights = averaging_weights(Algorithm::ProxSgd, a, gamma, 40);
    const VariationalParams expected = averaged_iterate(traj, weights);
    CHECK((traj.averaged->mean - expected.mean).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((traj.averaged->factor - expected.factor).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("tail average is the uniform mean of the requested suffix") {
  const TargetModel model = standard_normal(2);
  const VariationalParams w0{Eigen::Vector2d(2, 2), Eigen::MatrixXd::Identity(2, 2),
                             FactorSpace::LowerTriangular};
  OptimizerSpec spec = prox_spec(0.05, 20, 31);
  spec.store_iterates = true;
  spec.tail_average_start = 16;  // mean of w^16..w^20
  const Trajectory traj = prox_sgd_run(w0, model, spec);
  REQUIRE(traj.tail_average.has_value());
  Eigen::VectorXd mean_sum = Eigen::VectorXd::Zero(2);
  for (int t = 16; t <= 20; ++t) mean_sum += traj.iterates[t].mean;
  CHECK((traj.tail_average->mean - mean_sum / 5.0).cwiseAbs().maxCoeff() < 1e-14);
}

}  // TEST_SUITE
