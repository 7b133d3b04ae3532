#include <benchmark/benchmark.h>

#include "gbvi/estimators.hpp"
#include "gbvi/gaussian_family.hpp"
#include "gbvi/optimizers.hpp"
#include "gbvi/rng.hpp"
#include "gbvi/targets.hpp"

using namespace gbvi;

namespace {

VariationalParams make_params(Eigen::Index d, FactorSpace space) {
  Eigen::MatrixXd C = Eigen::MatrixXd::Identity(d, d);
  RngStream rng(1234);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < i; ++j) {
      C(i, j) = 0.1 * rng.next_gaussian();
      if (space == FactorSpace::Symmetric) C(j, i) = C(i, j);
    }
  return {rng.next_gaussian_vector(d), C, space};
}

void DrawEstimate(benchmark::State& state, EstimatorKind kind, FactorSpace space) {
  const Eigen::Index d = state.range(0);
  const TargetModel model =
      gaussian_target(Eigen::VectorXd::Zero(d), Eigen::MatrixXd::Identity(d, d));
  const VariationalParams w = make_params(d, space);
  const FactorSolver solver(w);
  RngStream rng(7);
  for (auto _ : state) {
    const GradientEstimate g =
        draw_estimate(kind, w, model, rng.next_gaussian_vector(d), &solver);
    benchmark::DoNotOptimize(g.mean_grad.data());
  }
  state.SetComplexityN(state.range(0));
}

void EnergyDraw(benchmark::State& state) {
  DrawEstimate(state, EstimatorKind::Energy, FactorSpace::LowerTriangular);
}
void EntropyDraw(benchmark::State& state) {
  DrawEstimate(state, EstimatorKind::Entropy, FactorSpace::Symmetric);
}
void StlDraw(benchmark::State& state) {
  DrawEstimate(state, EstimatorKind::Stl, FactorSpace::Symmetric);
}
BENCHMARK(EnergyDraw)->RangeMultiplier(4)->Range(2, 128)->Complexity();
BENCHMARK(EntropyDraw)->RangeMultiplier(4)->Range(2, 128)->Complexity();
BENCHMARK(StlDraw)->RangeMultiplier(4)->Range(2, 128)->Complexity();

void EntropyProx(benchmark::State& state) {
  const Eigen::Index d = state.range(0);
  const VariationalParams w = make_params(d, FactorSpace::LowerTriangular);
  for (auto _ : state) {
    const VariationalParams out = prox_neg_entropy(w, 0.05);
    benchmark::DoNotOptimize(out.factor.data());
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(EntropyProx)->RangeMultiplier(4)->Range(2, 512)->Complexity();

void NondegenerateProjection(benchmark::State& state) {
  const Eigen::Index d = state.range(0);
  const VariationalParams w = make_params(d, FactorSpace::Symmetric);
  const NonDegeneracyLevel level{4.0};
  for (auto _ : state) {
    const VariationalParams out = project_nondegenerate(w, level);
    benchmark::DoNotOptimize(out.factor.data());
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(NondegenerateProjection)->RangeMultiplier(4)->Range(2, 512)->Complexity();

void LogDensity(benchmark::State& state) {
  const Eigen::Index d = state.range(0);
  const VariationalParams w = make_params(d, FactorSpace::LowerTriangular);
  RngStream rng(9);
  const Eigen::VectorXd z = rng.next_gaussian_vector(d);
  for (auto _ : state) {
    benchmark::DoNotOptimize(log_q(w, z));
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(LogDensity)->RangeMultiplier(4)->Range(2, 512)->Complexity();

void ProxSgdIteration(benchmark::State& state) {
  const Eigen::Index d = state.range(0);
  const TargetModel model =
      gaussian_target(Eigen::VectorXd::Zero(d), Eigen::MatrixXd::Identity(d, d));
  OptimizerSpec spec;
  spec.algorithm = Algorithm::ProxSgd;
  spec.estimator = EstimatorKind::Energy;
  spec.schedule = StepSchedule::constant(0.01);
  spec.iterations = 64;
  spec.seed = 5;
  spec.record_every = spec.iterations + 1;
  const VariationalParams w0 = make_params(d, FactorSpace::LowerTriangular);
  for (auto _ : state) {
    const Trajectory traj = prox_sgd_run(w0, model, spec);
    benchmark::DoNotOptimize(traj.final_params.mean.data());
  }
  state.SetItemsProcessed(state.iterations() * spec.iterations);
}
BENCHMARK(ProxSgdIteration)->RangeMultiplier(4)->Range(2, 32);

}  // namespace

BENCHMARK_MAIN();
