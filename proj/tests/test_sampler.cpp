#include <cmath>

#include "asal/task_sampler.hpp"
#include "doctest.h"

namespace {

asal::TaskSamplerOptions constrained_options(int dim) {
  asal::TaskSamplerOptions opt;
  opt.dim = dim;
  opt.constrained = true;
  opt.n_init = 5;
  return opt;
}

}  // namespace

TEST_CASE("hyperparameter draws respect their ranges and budget") {
  asal::Rng rng(41);
  asal::TaskSamplerOptions opt = constrained_options(2);
  for (int trial = 0; trial < 500; ++trial) {
    const asal::TaskHyperParams hp = asal::sample_hyperparams(rng, opt);
    CHECK(hp.f_kernel.variance >= 0.9616);
    CHECK(hp.f_kernel.variance <= 1.0);
    CHECK(hp.f_kernel.lengthscales.minCoeff() >= 0.2);
    // Total observation power is pinned: variance + noise = 1.0001.
    CHECK(hp.f_kernel.variance + hp.f_noise_var ==
          doctest::Approx(1.0001).epsilon(1e-12));
    CHECK(hp.f_noise_var >= 1e-4 - 1e-12);
    CHECK(hp.f_noise_var <= 0.0385 + 1e-12);

    REQUIRE(hp.q_kernel.has_value());
    REQUIRE(hp.q_mean.has_value());
    const double c2 = 0.5;  // default prior-mean scale squared
    CHECK(hp.q_mean->c == doctest::Approx(std::sqrt(0.5)).epsilon(1e-12));
    CHECK(hp.q_kernel->variance >= 0.9616 - c2 - 1e-12);
    CHECK(hp.q_kernel->variance <= 1.0 - c2 + 1e-12);
    CHECK(c2 + hp.q_kernel->variance + hp.q_noise_var ==
          doctest::Approx(1.0001).epsilon(1e-12));
    CHECK(hp.q_mean->w.minCoeff() >= 5.0);
    CHECK(hp.q_mean->w.maxCoeff() <= 40.0);
    // Q is orthogonal.
    const Eigen::MatrixXd QtQ = hp.q_mean->Q.transpose() * hp.q_mean->Q;
    CHECK((QtQ - Eigen::MatrixXd::Identity(2, 2)).lpNorm<Eigen::Infinity>() <
          1e-10);
  }
}

TEST_CASE("unconstrained draws carry no constraint branch") {
  asal::Rng rng(42);
  asal::TaskSamplerOptions opt;
  opt.dim = 1;
  const asal::TaskHyperParams hp = asal::sample_hyperparams(rng, opt);
  CHECK_FALSE(hp.q_kernel.has_value());
  CHECK_FALSE(hp.q_mean.has_value());
}

TEST_CASE("lengthscale tail follows the shifted exponential") {
  asal::Rng rng(43);
  asal::TaskSamplerOptions opt;
  opt.dim = 1;
  double acc = 0.0;
  const int n = 4000;
  for (int i = 0; i < n; ++i) {
    acc += asal::sample_hyperparams(rng, opt).f_kernel.lengthscales[0];
  }
  // Mean of 0.2 + Exp(rate 10) is 0.3; the standard error at n = 4000 is
  // about 0.0016.
  CHECK(acc / n == doctest::Approx(0.3).epsilon(0.02));
}

TEST_CASE("sampling is deterministic in the seed") {
  asal::Rng a(99), b(99);
  const asal::TaskSamplerOptions opt = constrained_options(2);
  const asal::Task ta = asal::sample_task(a, opt);
  const asal::Task tb = asal::sample_task(b, opt);
  CHECK(ta.hp.f_kernel.variance == tb.hp.f_kernel.variance);
  CHECK((ta.f.freq - tb.f.freq).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((ta.init.inputs - tb.init.inputs).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((ta.init.outputs - tb.init.outputs).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("constrained tasks start inside the safe seed region") {
  asal::Rng rng(44);
  const asal::TaskSamplerOptions opt = constrained_options(2);
  int fallbacks = 0;
  for (int trial = 0; trial < 30; ++trial) {
    const asal::Task task = asal::sample_task(rng, opt);
    REQUIRE(task.init.size() == opt.n_init);
    REQUIRE(task.init.safety.has_value());
    CHECK(task.init.inputs.minCoeff() >= 0.4);
    CHECK(task.init.inputs.maxCoeff() <= 0.6);
    if (task.init_fallback) {
      ++fallbacks;
    } else {
      CHECK(task.init.safety->minCoeff() >= 0.0);
    }
    task.init.validate();
  }
  // The bump prior keeps the center overwhelmingly safe; the retry cap
  // should essentially never trigger here.
  CHECK(fallbacks <= 2);
}

TEST_CASE("unconstrained tasks draw initial inputs over the whole domain") {
  asal::Rng rng(45);
  asal::TaskSamplerOptions opt;
  opt.dim = 1;
  opt.n_init = 40;
  const asal::Task task = asal::sample_task(rng, opt);
  CHECK(task.init.size() == 40);
  CHECK_FALSE(task.init.safety.has_value());
  CHECK(task.init.inputs.minCoeff() < 0.2);
  CHECK(task.init.inputs.maxCoeff() > 0.8);
}

TEST_CASE("hopeless constraints trigger the wholesale fallback") {
  // A constraint that is always deeply negative can never pass the filter,
  // so the sampler accepts the final batch and flags it.
  asal::FourierFunction f;
  f.freq = Eigen::MatrixXd::Constant(1, 1, 6.0);
  f.weight = Eigen::VectorXd::Zero(1);
  f.phase = Eigen::VectorXd::Zero(1);
  f.domain_shift = 0.0;
  asal::FourierFunction q = f;
  q.domain_shift = 10.0;  // q(x) = -10 everywhere

  asal::Rng rng(46);
  const asal::SafeInitialResult res = asal::sample_safe_initial(
      rng, f, q, 1e-8, 1e-8, 4, 0.4, 0.6, 50);
  CHECK(res.fallback);
  CHECK(res.data.size() == 4);
  REQUIRE(res.data.safety.has_value());
  CHECK(res.data.safety->maxCoeff() < -9.0);
  CHECK(res.data.inputs.minCoeff() >= 0.4);
  CHECK(res.data.inputs.maxCoeff() <= 0.6);
}

TEST_CASE("partial progress accumulates across retry batches") {
  // A constraint that is positive only on the left half of the region makes
  // single batches unlikely to succeed wholesale, exercising the cumulative
  // accept path.
  asal::FourierFunction f;
  f.freq = Eigen::MatrixXd::Constant(1, 1, 6.0);
  f.weight = Eigen::VectorXd::Zero(1);
  f.phase = Eigen::VectorXd::Zero(1);
  asal::SechMeanParams halfplane;
  // Steep bump centered at 0.5: positive at the center, negative past
  // |x - 0.5| ~ 0.06, so a batch of six rarely passes wholesale.
  halfplane.c = 1.0;
  halfplane.w = Eigen::VectorXd::Constant(1, 400.0);
  halfplane.Q = Eigen::MatrixXd::Identity(1, 1);
  asal::FourierFunction q = f;
  q.prior_mean = halfplane;

  asal::Rng rng(47);
  const asal::SafeInitialResult res = asal::sample_safe_initial(
      rng, f, q, 1e-8, 1e-8, 6, 0.4, 0.6, 50);
  CHECK(res.data.size() == 6);
  if (!res.fallback) {
    CHECK(res.data.safety->minCoeff() >= 0.0);
  }
}

TEST_CASE("grid draws concentrate near the boundary") {
  asal::Rng rng(48);
  const Eigen::MatrixXd X = asal::sample_grid(rng, 4000, 2);
  CHECK(X.minCoeff() >= 0.0);
  CHECK(X.maxCoeff() <= 1.0);
  CHECK(X.mean() == doctest::Approx(0.5).epsilon(0.05));
  // Arcsine law: P(x < 0.1) = (2/pi) asin(sqrt(0.1)) which is about 0.205,
  // twice the uniform mass.
  const double frac =
      (X.array() < 0.1).cast<double>().sum() / X.size();
  CHECK(frac == doctest::Approx(0.2048).epsilon(0.15));
}
