#include "gbvi/schedules.hpp"

#include "gbvi/rng.hpp"

#include "doctest.h"

#include <cmath>

using namespace gbvi;

namespace {

VariationalParams unit_anchor(Eigen::Index d) {
  return {Eigen::VectorXd::Zero(d), Eigen::MatrixXd::Identity(d, d),
          FactorSpace::Symmetric};
}

}  // namespace

TEST_SUITE("schedules") {

TEST_CASE("quad_bound table rows") {
  BoundInputs in;
  in.dim = 2;
  in.smoothness = 1.0;
  in.dist_sq_to_map = 0.0;

  const QuadBound energy = quad_bound(EstimatorKind::Energy, in, unit_anchor(2));
  CHECK(energy.quadratic == doctest::Approx(10.0));
  CHECK(energy.offset == doctest::Approx(0.0));
  CHECK(energy.validity == BoundValidity::Anywhere);

  BoundInputs ent = in;
  ent.entropy_level = 1.0;
  const QuadBound entropy = quad_bound(EstimatorKind::Entropy, ent, unit_anchor(2));
  CHECK(entropy.quadratic == doctest::Approx(20.0));
  CHECK(entropy.offset == doctest::Approx(2.0));
  CHECK(entropy.validity == BoundValidity::NondegenerateL);

  BoundInputs stl = in;
  stl.residual_smoothness = 0.0;
  const QuadBound gaussian_stl = quad_bound(EstimatorKind::Stl, stl, unit_anchor(2));
  CHECK(gaussian_stl.quadratic == doctest::Approx(40.0));
  CHECK(gaussian_stl.offset == 0.0);  // exactly zero when the residual is flat
  CHECK(gaussian_stl.validity == BoundValidity::NondegenerateM);
}

TEST_CASE("quad_bound distance fallback and missing-constant errors") {
  BoundInputs in;
  in.dim = 2;
  in.smoothness = 1.0;
  in.strong_concavity = 4.0;
  // No stored distance: fall back to dim/mu.
  const QuadBound b = quad_bound(EstimatorKind::Energy, in, unit_anchor(2));
  CHECK(b.offset == doctest::Approx(10.0 * (2.0 / 4.0)));

  BoundInputs no_mu;
  no_mu.dim = 2;
  no_mu.smoothness = 1.0;
  CHECK_THROWS_WITH_AS(quad_bound(EstimatorKind::Energy, no_mu, unit_anchor(2)),
                       doctest::Contains("dist_sq_to_map"), std::invalid_argument);

  BoundInputs no_level = in;
  CHECK_THROWS_WITH_AS(quad_bound(EstimatorKind::Entropy, no_level, unit_anchor(2)),
                       doctest::Contains("entropy_level"), std::invalid_argument);

  BoundInputs no_residual = in;
  CHECK_THROWS_WITH_AS(quad_bound(EstimatorKind::Stl, no_residual, unit_anchor(2)),
                       doctest::Contains("residual_smoothness"), std::invalid_argument);

  BoundInputs k_without_dist = in;
  k_without_dist.residual_smoothness = 2.0;
  k_without_dist.dist_sq_to_map = 1.0;
  CHECK_THROWS_WITH_AS(quad_bound(EstimatorKind::Stl, k_without_dist, unit_anchor(2)),
                       doctest::Contains("dist_sq_to_residual_point"),
                       std::invalid_argument);
}

TEST_CASE("stepsize rules") {
  const StepSchedule constant = StepSchedule::constant(0.3);
  for (std::int64_t t : {0, 1, 7, 1000}) CHECK(constant.at(t) == 0.3);

  const StepSchedule prox = StepSchedule::decaying_prox(1.0, 10.0);
  CHECK(prox.at(0) == doctest::Approx(0.05));  // min{mu/2a, 1} = 0.05
  // Tail behaves like 2/(mu t).
  CHECK(prox.at(1000000) == doctest::Approx(2.0 / 1000000.0).epsilon(1e-3));

  const StepSchedule proj = StepSchedule::decaying_proj(1.0, 10.0);
  CHECK(proj.at(0) == doctest::Approx(0.05));  // min{0.05, 2}
  CHECK(proj.at(100) == doctest::Approx(std::min(0.05, 2.0 * 201.0 / (101.0 * 101.0))));

  // Legality: never above mu/(2a).
  for (std::int64_t t = 0; t < 2000; ++t) {
    CHECK(prox.at(t) <= 0.05 + 1e-15);
    CHECK(proj.at(t) <= 0.05 + 1e-15);
  }

  CHECK_THROWS_AS(StepSchedule::decaying_prox(0.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(constant.at(-1), std::invalid_argument);
}

TEST_CASE("horizon-tuned constant stepsizes") {
  CHECK(constant_stepsize_for_horizon(Algorithm::ProxSgd, 4.0, 100) ==
        doctest::Approx(0.05));
  CHECK(constant_stepsize_for_horizon(Algorithm::ProjSgd, 2.0, 100) ==
        doctest::Approx(0.1));
  CHECK_THROWS_AS(constant_stepsize_for_horizon(Algorithm::ProxSgd, 4.0, 1),
                  std::invalid_argument);

  // With the Energy constant a = 2(d+3)M^2 >= M^2, the tuned stepsize obeys
  // the 1/M cap for every T >= 2.
  const double M = 3.0;
  const double a = bound_quadratic(EstimatorKind::Energy, 2, M);
  for (std::int64_t T : {2, 5, 100}) {
    CHECK(constant_stepsize_for_horizon(Algorithm::ProxSgd, a, T) <= 1.0 / M);
  }
}

TEST_CASE("log-horizon stepsize preset validates its regime") {
  // T / log T >= 2 a A / mu must hold.
  CHECK(log_horizon_stepsize(1.0, 1000, 10.0, 0.5) ==
        doctest::Approx(std::log(1000.0) / 1000.0));
  CHECK_THROWS_AS(log_horizon_stepsize(1.0, 10, 100.0, 0.1), std::invalid_argument);
}

TEST_CASE("averaging weights") {
  // a = 0 gives uniform weights.
  const auto uniform = averaging_weights(Algorithm::ProjSgd, 0.0, 0.5, 4);
  for (double w : uniform) CHECK(w == doctest::Approx(0.25));

  // theta = 1/2: weights proportional to (1/4, 1/8, 1/16) -> (4/7, 2/7, 1/7).
  const auto geometric = averaging_weights(Algorithm::ProxSgd, 0.5, 1.0, 3);
  CHECK(geometric[0] == doctest::Approx(4.0 / 7.0));
  CHECK(geometric[1] == doctest::Approx(2.0 / 7.0));
  CHECK(geometric[2] == doctest::Approx(1.0 / 7.0));

  RngStream rng(88);
  for (int rep = 0; rep < 50; ++rep) {
    const double a = 10.0 * rng.next_uniform();
    const double gamma = 0.01 + rng.next_uniform();
    const std::int64_t T = 1 + static_cast<std::int64_t>(rng.next_u64() % 200);
    const Algorithm alg = rep % 2 == 0 ? Algorithm::ProxSgd : Algorithm::ProjSgd;
    const auto weights = averaging_weights(alg, a, gamma, T);
    double total = 0.0;
    for (double w : weights) {
      CHECK(w >= 0.0);
      total += w;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("rate envelopes match their closed forms") {
  SUBCASE("geometric with floor at T = 0") {
    EnvelopeInputs in;
    in.gamma = 0.01;
    in.mu = 1.0;
    in.noise_quadratic = 50.0;
    in.noise_offset = 2.0;
    in.smoothness = 1.0;
    in.dist_sq_to_map = 3.0;
    in.initial_dist_sq = 7.0;
    const RateEnvelope env = rate_envelope(RateTheorem::ProxStrong, in);
    const double floor = 2.0 * in.gamma / in.mu * (in.noise_offset + 3.0);
    CHECK(env(0) == doctest::Approx(7.0 + floor));
    // Non-increasing toward the floor.
    double prev = env(0);
    for (std::int64_t t : {1, 2, 5, 10, 100, 1000}) {
      CHECK(env(t) <= prev + 1e-15);
      prev = env(t);
      CHECK(env(t) >= floor);
    }
  }
  SUBCASE("anytime quadratic plug-in") {
    EnvelopeInputs in;
    in.mu = 1.0;
    in.noise_quadratic = 1.0;  // floor(a/mu^2) = 1
    in.noise_offset = 0.5;
    in.smoothness = 1.0;
    in.dist_sq_to_map = 0.25;
    in.initial_dist_sq = 2.0;
    const RateEnvelope env = rate_envelope(RateTheorem::ProxStrongAnytime, in);
    CHECK(env(4) == doctest::Approx(16.0 / 16.0 * 2.0 + (8.0 / 4.0) * 0.75));
  }
  SUBCASE("pure geometric decay when the offset vanishes") {
    EnvelopeInputs in;
    in.gamma = 0.02;
    in.mu = 1.0;
    in.noise_quadratic = 20.0;
    in.initial_dist_sq = 4.0;
    const RateEnvelope env = rate_envelope(RateTheorem::GaussianStlGeometric, in);
    CHECK(env(100) == doctest::Approx(std::pow(1.0 - 0.01, 100.0) * 4.0));
    CHECK(env(100000) < 1e-40);  // no floor at all
  }
  SUBCASE("averaged envelopes scale exactly as 1/sqrt(T)") {
    EnvelopeInputs in;
    in.noise_quadratic = 6.0;
    in.noise_offset = 1.5;
    in.initial_dist_sq = 2.5;
    for (RateTheorem theorem : {RateTheorem::ProxConvexAvg, RateTheorem::ProjConvexAvg}) {
      const RateEnvelope env = rate_envelope(theorem, in);
      for (std::int64_t T : {2, 16, 250}) {
        CHECK(env(T) / env(4 * T) == doctest::Approx(2.0).epsilon(1e-12));
      }
    }
  }
  SUBCASE("stepsize preconditions are enforced") {
    EnvelopeInputs in;
    in.gamma = 1.0;  // violates mu/(2a)
    in.mu = 1.0;
    in.noise_quadratic = 50.0;
    in.initial_dist_sq = 1.0;
    CHECK_THROWS_AS(rate_envelope(RateTheorem::ProxStrong, in), std::invalid_argument);
    CHECK_THROWS_AS(rate_envelope(RateTheorem::ProjStrong, in), std::invalid_argument);
  }
}

}  // TEST_SUITE
