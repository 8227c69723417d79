#include <benchmark/benchmark.h>

#include <Eigen/Dense>
#include <cstdint>

#include "asal/dataset.hpp"
#include "asal/deploy.hpp"
#include "asal/fourier.hpp"
#include "asal/gp.hpp"
#include "asal/kernel.hpp"
#include "asal/policy.hpp"
#include "asal/rng.hpp"

namespace {

Eigen::MatrixXd uniform_rows(asal::Rng& rng, int n, int dim) {
  Eigen::MatrixXd X(n, dim);
  for (int i = 0; i < n; ++i) {
    for (int d = 0; d < dim; ++d) X(i, d) = rng.uniform();
  }
  return X;
}

// History drawn from one smooth task/constraint pair so GP fits face
// realistic data rather than white noise.
asal::Dataset make_history(int n, int dim, bool with_safety,
                           std::uint64_t seed) {
  asal::Rng rng(seed);
  const asal::KernelParams kernel{1.0, Eigen::VectorXd::Constant(dim, 0.3)};
  const auto f = asal::sample_fourier_function(rng, kernel, 100);
  const auto q = asal::sample_fourier_function(rng, kernel, 100);
  asal::Dataset data;
  data.inputs = uniform_rows(rng, n, dim);
  data.outputs = f.eval_rows(data.inputs);
  for (int i = 0; i < n; ++i) data.outputs[i] += 0.1 * rng.normal();
  if (with_safety) {
    Eigen::VectorXd z = q.eval_rows(data.inputs);
    for (int i = 0; i < n; ++i) z[i] += 0.1 * rng.normal();
    data.safety = z;
  }
  return data;
}

asal::gp::FitOptions deploy_fit_options() {
  asal::gp::FitOptions fit;
  fit.restarts = 5;
  fit.max_iterations = 200;
  return fit;
}

// Amortized query: one network forward, no GP algebra. Sweeps history size.
void BM_PolicyQuery(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const int dim = 2;
  asal::policy::PolicyConfig config;
  config.dim = dim;
  config.embed_dim = 128;
  config.has_safety_branch = true;
  config.mode = asal::policy::PolicyConfig::Mode::kAttention;
  asal::Rng rng(7);
  const auto params = asal::policy::init_policy(config, rng);
  const auto history = make_history(n, dim, true, 11);
  for (auto _ : state) {
    benchmark::DoNotOptimize(asal::policy::policy_query(params, 10, 20, history));
  }
}
BENCHMARK(BM_PolicyQuery)->Arg(1)->Arg(5)->Arg(20)->Arg(50)->Arg(100);

// Same sweep with the small set-pooling network used in desk-scale runs.
void BM_PolicyQueryDeepSet(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  asal::policy::PolicyConfig config;
  config.dim = 1;
  config.embed_dim = 32;
  config.head_dim = 8;
  config.hidden = 64;
  config.mode = asal::policy::PolicyConfig::Mode::kDeepSet;
  asal::Rng rng(7);
  const auto params = asal::policy::init_policy(config, rng);
  const auto history = make_history(n, 1, false, 11);
  for (auto _ : state) {
    benchmark::DoNotOptimize(asal::policy::policy_query(params, 10, 20, history));
  }
}
BENCHMARK(BM_PolicyQueryDeepSet)->Arg(1)->Arg(20)->Arg(100);

// GP competitor: two Type-II fits plus candidate scoring per step. The
// per-query gap against BM_PolicyQuery at matching history sizes is the
// amortization headroom.
void BM_SafeAlStep(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const int dim = 2;
  const auto history = make_history(n, dim, true, 11);
  asal::Rng rng(13);
  const Eigen::MatrixXd candidates = uniform_rows(rng, 1000, dim);
  const auto fit = deploy_fit_options();
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        asal::deploy::safe_al_step(history, candidates, 0.05, fit));
  }
}
BENCHMARK(BM_SafeAlStep)->Arg(5)->Arg(20)->Arg(50)->Unit(benchmark::kMillisecond);

// Unconstrained variant: one fit per step.
void BM_ConventionalAlStep(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const int dim = 2;
  const auto history = make_history(n, dim, false, 11);
  asal::Rng rng(13);
  const Eigen::MatrixXd candidates = uniform_rows(rng, 1000, dim);
  const auto fit = deploy_fit_options();
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        asal::deploy::conventional_al_step(history, candidates, fit));
  }
}
BENCHMARK(BM_ConventionalAlStep)
    ->Arg(5)
    ->Arg(20)
    ->Arg(50)
    ->Unit(benchmark::kMillisecond);

// Posterior means/variances at 2000 candidates as training rows grow; the
// Cholesky is cubic in rows, the candidate sweep linear.
void BM_PosteriorMarginals(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const int dim = 2;
  const auto history = make_history(n, dim, false, 11);
  asal::Rng rng(13);
  const Eigen::MatrixXd candidates = uniform_rows(rng, 2000, dim);
  const asal::KernelParams kernel{1.0, Eigen::VectorXd::Constant(dim, 0.3)};
  for (auto _ : state) {
    benchmark::DoNotOptimize(asal::gp::posterior_marginals(
        history.inputs, history.outputs, candidates, kernel, 1e-2));
  }
}
BENCHMARK(BM_PosteriorMarginals)->Arg(10)->Arg(50)->Arg(200)->Arg(500);

// Full deployment-grade hyperparameter fit.
void BM_FitType2Ml(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const int dim = 2;
  const auto history = make_history(n, dim, false, 11);
  const auto fit = deploy_fit_options();
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        asal::gp::fit_type2_ml(history.inputs, history.outputs, fit));
  }
}
BENCHMARK(BM_FitType2Ml)->Arg(5)->Arg(20)->Arg(50)->Unit(benchmark::kMillisecond);

// Batched cosine-feature evaluation, the inner loop of task simulation.
void BM_FourierEvalRows(benchmark::State& state) {
  const int m = static_cast<int>(state.range(0));
  const int dim = 2;
  asal::Rng rng(7);
  const asal::KernelParams kernel{1.0, Eigen::VectorXd::Constant(dim, 0.3)};
  const auto f = asal::sample_fourier_function(rng, kernel, 100);
  const Eigen::MatrixXd X = uniform_rows(rng, m, dim);
  for (auto _ : state) {
    benchmark::DoNotOptimize(f.eval_rows(X));
  }
}
BENCHMARK(BM_FourierEvalRows)->Arg(100)->Arg(1000)->Arg(10000);

}  // namespace

BENCHMARK_MAIN();
