#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "asal/deploy.hpp"
#include "asal/gp.hpp"
#include "asal/objectives.hpp"
#include "asal/policy.hpp"
#include "asal/problems.hpp"
#include "asal/rng.hpp"

using asal::Dataset;
using asal::Rng;
namespace deploy = asal::deploy;
namespace gp = asal::gp;
namespace problems = asal::problems;

namespace {

double marginal_entropy(double var) {
  return 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e * var);
}

Dataset history_1d(bool with_safety) {
  Dataset h;
  h.inputs.resize(5, 1);
  h.inputs << 0.1, 0.3, 0.5, 0.7, 0.9;
  h.outputs.resize(5);
  h.outputs << 0.2, 0.9, 0.1, -0.7, -0.3;
  if (with_safety) {
    h.safety = Eigen::VectorXd(5);
    *h.safety << 2.1, 1.9, 2.2, -1.8, -2.3;
  }
  return h;
}

Eigen::MatrixXd linspace_candidates(int n) {
  Eigen::MatrixXd c(n, 1);
  for (int i = 0; i < n; ++i) {
    c(i, 0) = static_cast<double>(i) / (n - 1);
  }
  return c;
}

asal::policy::PolicyParams tiny_policy(int dim, bool safety) {
  asal::policy::PolicyConfig config;
  config.dim = dim;
  config.embed_dim = 16;
  config.hidden = 32;
  config.encoder_layers = 1;
  config.head_dim = 8;
  config.mode = asal::policy::PolicyConfig::Mode::kDeepSet;
  config.has_safety_branch = safety;
  config.has_budget_input = true;
  Rng rng(404);
  return asal::policy::init_policy(config, rng);
}

std::filesystem::path write_file(const std::string& name,
                                 const std::string& body) {
  const std::filesystem::path path =
      std::filesystem::temp_directory_path() / name;
  std::ofstream out(path);
  out << body;
  return path;
}

std::string format17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Synthetic 40-row constrained pool over [0,1]^2, unique outputs as row keys.
problems::Pool synthetic_pool() {
  std::string body = "x1,x2,y,z\n";
  Rng gen(55);
  for (int i = 0; i < 8; ++i) {
    body += format17(gen.uniform(0.42, 0.58)) + "," +
            format17(gen.uniform(0.42, 0.58)) + "," + format17(0.01 * i) +
            "," + format17(gen.uniform(0.5, 2.0)) + "\n";
  }
  for (int i = 8; i < 26; ++i) {
    body += format17(gen.uniform()) + "," + format17(gen.uniform()) + "," +
            format17(0.01 * i) + "," + format17(gen.uniform(0.1, 2.0)) + "\n";
  }
  for (int i = 26; i < 40; ++i) {
    body += format17(gen.uniform()) + "," + format17(gen.uniform()) + "," +
            format17(0.01 * i) + "," + format17(gen.uniform(-2.0, -0.1)) +
            "\n";
  }
  const auto path = write_file("asal_deploy_pool.csv", body);
  return problems::parse_pool_csv(path.string(), 2, true);
}

}  // namespace

TEST_CASE("config validation pins modes and tolerances") {
  deploy::DeployConfig config;
  config.mode = deploy::Mode::kSafeGpAl;
  config.horizon = 10;
  config.gamma = 0.05;
  config.discretization = 100;
  config.n_init = 1;
  CHECK_NOTHROW(config.validate());

  deploy::DeployConfig bad = config;
  bad.gamma = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad.gamma = 1.5;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = config;
  bad.mode = deploy::Mode::kGpAl;
  bad.gamma = 0.0;  // tolerance is irrelevant outside safe modes
  CHECK_NOTHROW(bad.validate());
  bad = config;
  bad.discretization = 9;  // fewer candidates than queries
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = config;
  bad.horizon = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = config;
  bad.n_init = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

  for (const char* name : {"policy", "gp_al", "safe_gp_al", "minunsafe_gp_al",
                           "random", "safe_random"}) {
    CHECK(deploy::mode_name(deploy::parse_mode(name)) == name);
  }
  CHECK_THROWS_AS((void)deploy::parse_mode("thompson"), std::invalid_argument);
  CHECK(deploy::mode_is_safe(deploy::Mode::kSafeGpAl));
  CHECK(deploy::mode_is_safe(deploy::Mode::kMinUnsafeGpAl));
  CHECK(deploy::mode_is_safe(deploy::Mode::kSafeRandom));
  CHECK_FALSE(deploy::mode_is_safe(deploy::Mode::kPolicy));
  CHECK_FALSE(deploy::mode_is_safe(deploy::Mode::kGpAl));
  CHECK_FALSE(deploy::mode_is_safe(deploy::Mode::kRandom));
}

TEST_CASE("conventional step maximizes predictive entropy by brute force") {
  const Dataset h = history_1d(false);
  const Eigen::MatrixXd candidates = linspace_candidates(41);

  gp::reset_counters();
  const deploy::StepChoice choice =
      deploy::conventional_al_step(h, candidates);
  CHECK(gp::fit_count() == 1);
  CHECK_FALSE(choice.fallback);

  const gp::FitResult fit = gp::fit_type2_ml(h.inputs, h.outputs);
  const gp::Marginals marg = gp::posterior_marginals(
      h.inputs, h.outputs, candidates, fit.kernel, fit.noise_var);
  int expected = 0;
  for (int i = 1; i < marg.var.size(); ++i) {
    if (marginal_entropy(marg.var[i]) > marginal_entropy(marg.var[expected])) {
      expected = i;
    }
  }
  CHECK(choice.index == expected);
  // Entropy is monotone in the predictive variance.
  int var_argmax = 0;
  for (int i = 1; i < marg.var.size(); ++i) {
    if (marg.var[i] > marg.var[var_argmax]) var_argmax = i;
  }
  CHECK(expected == var_argmax);
}

TEST_CASE("a lone centered observation sends entropy search to the boundary") {
  Dataset h;
  h.inputs = Eigen::MatrixXd::Constant(1, 1, 0.5);
  h.outputs = Eigen::VectorXd::Zero(1);
  const Eigen::MatrixXd candidates = linspace_candidates(101);
  const deploy::StepChoice choice = deploy::conventional_al_step(h, candidates);
  const double x = candidates(choice.index, 0);
  CHECK((x == 0.0 || x == 1.0));
}

TEST_CASE("safety filtering respects the tolerance and falls back when starved") {
  const Dataset h = history_1d(true);
  const Eigen::MatrixXd candidates = linspace_candidates(37);
  const double gamma = 0.3;

  gp::reset_counters();
  const deploy::StepChoice choice =
      deploy::safe_al_step(h, candidates, gamma);
  CHECK(gp::fit_count() == 2);

  const gp::FitResult tf = gp::fit_type2_ml(h.inputs, h.outputs);
  const gp::FitResult sf = gp::fit_type2_ml(h.inputs, *h.safety);
  const gp::Marginals fm = gp::posterior_marginals(
      h.inputs, h.outputs, candidates, tf.kernel, tf.noise_var);
  const gp::Marginals sm = gp::posterior_marginals(
      h.inputs, *h.safety, candidates, sf.kernel, sf.noise_var);

  int expected = -1;
  for (int i = 0; i < candidates.rows(); ++i) {
    if (gp::safety_prob_nonneg(sm.mean[i], sm.var[i]) < 1.0 - gamma) continue;
    if (expected < 0 || fm.var[i] > fm.var[expected]) expected = i;
  }
  REQUIRE(expected >= 0);
  CHECK_FALSE(choice.fallback);
  CHECK(choice.index == expected);
  CHECK(gp::safety_prob_nonneg(sm.mean[choice.index], sm.var[choice.index]) >=
        1.0 - gamma);

  // All-unsafe data starve the filter; the step falls back to max safety.
  Dataset unsafe = h;
  *unsafe.safety << -2.0, -1.7, -2.4, -1.9, -2.1;
  const deploy::StepChoice fb =
      deploy::safe_al_step(unsafe, candidates, 0.5);
  CHECK(fb.fallback);
  const gp::FitResult sf2 = gp::fit_type2_ml(unsafe.inputs, *unsafe.safety);
  const gp::Marginals sm2 = gp::posterior_marginals(
      unsafe.inputs, *unsafe.safety, candidates, sf2.kernel, sf2.noise_var);
  int best = 0;
  for (int i = 1; i < candidates.rows(); ++i) {
    if (gp::safety_prob_nonneg(sm2.mean[i], sm2.var[i]) >
        gp::safety_prob_nonneg(sm2.mean[best], sm2.var[best])) {
      best = i;
    }
  }
  CHECK(fb.index == best);
}

TEST_CASE("a full tolerance makes the safe step conventional") {
  const Dataset h = history_1d(true);
  const Eigen::MatrixXd candidates = linspace_candidates(29);
  Dataset plain = h;
  plain.safety.reset();
  const deploy::StepChoice vacuous = deploy::safe_al_step(h, candidates, 1.0);
  const deploy::StepChoice conventional =
      deploy::conventional_al_step(plain, candidates);
  CHECK_FALSE(vacuous.fallback);
  CHECK(vacuous.index == conventional.index);
}

TEST_CASE("the penalty step matches its brute-force score") {
  const Dataset h = history_1d(true);
  const Eigen::MatrixXd candidates = linspace_candidates(33);
  const double gamma = 0.2;

  gp::reset_counters();
  const deploy::StepChoice choice =
      deploy::minunsafe_al_step(h, candidates, gamma);
  CHECK(gp::fit_count() == 2);
  CHECK_FALSE(choice.fallback);

  const gp::FitResult tf = gp::fit_type2_ml(h.inputs, h.outputs);
  const gp::FitResult sf = gp::fit_type2_ml(h.inputs, *h.safety);
  const gp::Marginals fm = gp::posterior_marginals(
      h.inputs, h.outputs, candidates, tf.kernel, tf.noise_var);
  const gp::Marginals sm = gp::posterior_marginals(
      h.inputs, *h.safety, candidates, sf.kernel, sf.noise_var);
  const Eigen::VectorXd scores =
      asal::objectives::minunsafe_scores(fm, sm, gamma);
  int expected = 0;
  for (int i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[expected]) expected = i;
  }
  CHECK(choice.index == expected);

  // With every candidate clearly safe the penalty is the constant -log(gamma)
  // and the argmax coincides with the conventional entropy step.
  Dataset all_safe = h;
  *all_safe.safety << 2.0, 2.2, 1.9, 2.1, 2.3;
  const gp::FitResult sf3 =
      gp::fit_type2_ml(all_safe.inputs, *all_safe.safety);
  const gp::Marginals sm3 = gp::posterior_marginals(
      all_safe.inputs, *all_safe.safety, candidates, sf3.kernel,
      sf3.noise_var);
  bool everywhere_clamped = true;
  for (int i = 0; i < candidates.rows(); ++i) {
    if (gp::safety_prob_neg(sm3.mean[i], sm3.var[i]) > gamma) {
      everywhere_clamped = false;
    }
  }
  if (everywhere_clamped) {
    Dataset plain = h;
    plain.safety.reset();
    const deploy::StepChoice pen =
        deploy::minunsafe_al_step(all_safe, candidates, gamma);
    const deploy::StepChoice conv =
        deploy::conventional_al_step(plain, candidates);
    CHECK(pen.index == conv.index);
  }
}

TEST_CASE("random choices stay inside the candidate set and safe random filters") {
  Rng rng(31);
  std::set<int> seen;
  for (int i = 0; i < 50; ++i) {
    const deploy::StepChoice c = deploy::random_step(rng, 7);
    CHECK(c.index >= 0);
    CHECK(c.index < 7);
    seen.insert(c.index);
  }
  CHECK(seen.size() > 1);
  Rng r1(9), r2(9);
  CHECK(deploy::random_step(r1, 1000).index ==
        deploy::random_step(r2, 1000).index);

  const Dataset h = history_1d(true);
  const Eigen::MatrixXd candidates = linspace_candidates(25);
  const double gamma = 0.3;
  const gp::FitResult sf = gp::fit_type2_ml(h.inputs, *h.safety);
  const gp::Marginals sm = gp::posterior_marginals(
      h.inputs, *h.safety, candidates, sf.kernel, sf.noise_var);

  gp::reset_counters();
  Rng r3(77);
  for (int i = 0; i < 10; ++i) {
    const deploy::StepChoice c =
        deploy::safe_random_step(r3, h, candidates, gamma);
    CHECK_FALSE(c.fallback);
    CHECK(gp::safety_prob_nonneg(sm.mean[c.index], sm.var[c.index]) >=
          1.0 - gamma);
  }
  CHECK(gp::fit_count() == 10);

  Dataset unsafe = h;
  *unsafe.safety << -2.0, -1.7, -2.4, -1.9, -2.1;
  Rng r4(78);
  const deploy::StepChoice fb =
      deploy::safe_random_step(r4, unsafe, candidates, 0.5);
  CHECK(fb.fallback);
}

TEST_CASE("nearest unqueried pool projection skips consumed rows") {
  Eigen::MatrixXd pool(4, 2);
  pool << 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.5, 0.5;
  std::vector<bool> queried(4, false);
  Eigen::Vector2d x(0.1, 0.1);
  CHECK(deploy::nearest_unqueried(pool, queried, x) == 0);
  queried[0] = true;
  CHECK(deploy::nearest_unqueried(pool, queried, x) == 3);
  // Exact ties resolve to the lowest row index.
  Eigen::Vector2d mid(0.5, 0.0);
  std::vector<bool> fresh(4, false);
  CHECK(deploy::nearest_unqueried(pool, fresh, mid) == 0);
  std::vector<bool> all(4, true);
  CHECK_THROWS_AS((void)deploy::nearest_unqueried(pool, all, x),
                  std::invalid_argument);
}

TEST_CASE("policy deployment never touches gram matrices in the loop") {
  const problems::BenchmarkProblem sine = problems::make_sin();
  const asal::policy::PolicyParams params = tiny_policy(1, false);

  deploy::DeployConfig config;
  config.mode = deploy::Mode::kPolicy;
  config.horizon = 5;
  config.n_init = 2;
  config.discretization = 50;
  config.seed = 3;

  gp::reset_counters();
  const deploy::RunResult run = deploy::deploy(config, sine, &params);
  // The only hyperparameter fit is the final one for RMSE evaluation.
  CHECK(gp::fit_count() == 1);

  CHECK(run.queries.rows() == 5);
  CHECK(run.queries.cols() == 1);
  CHECK(run.queries.minCoeff() >= 0.0);
  CHECK(run.queries.maxCoeff() <= 1.0);
  CHECK(run.outputs.size() == 5);
  CHECK(run.safety_obs.size() == 0);
  CHECK(run.query_seconds.size() == 5);
  for (const double s : run.query_seconds) CHECK(s > 0.0);
  CHECK(std::isfinite(run.rmse));
  CHECK(run.rmse >= 0.0);
  CHECK(run.safe_fraction == 1.0);
  CHECK(run.fallback_count == 0);
  CHECK(run.pool_indices.empty());

  // Same configuration and seed reproduce the run bitwise.
  const deploy::RunResult again = deploy::deploy(config, sine, &params);
  CHECK((again.queries - run.queries).cwiseAbs().maxCoeff() == 0.0);
  CHECK(again.rmse == run.rmse);

  deploy::DeployConfig other = config;
  other.seed = 4;
  const deploy::RunResult diff = deploy::deploy(other, sine, &params);
  CHECK((diff.queries - run.queries).cwiseAbs().maxCoeff() > 0.0);

  CHECK_THROWS_AS((void)deploy::deploy(config, sine, nullptr),
                  std::invalid_argument);
}

TEST_CASE("gp deployment fits once per step plus the final evaluation") {
  const problems::BenchmarkProblem sine = problems::make_sin();

  deploy::DeployConfig config;
  config.mode = deploy::Mode::kGpAl;
  config.horizon = 6;
  config.n_init = 1;
  config.discretization = 300;
  config.seed = 11;

  gp::reset_counters();
  const deploy::RunResult run = deploy::deploy(config, sine, nullptr);
  CHECK(gp::fit_count() == 7);  // six steps and one final fit
  CHECK(run.queries.rows() == 6);
  CHECK(std::isfinite(run.rmse));

  config.mode = deploy::Mode::kRandom;
  gp::reset_counters();
  const deploy::RunResult rnd = deploy::deploy(config, sine, nullptr);
  CHECK(gp::fit_count() == 1);  // final fit only
  CHECK(rnd.queries.rows() == 6);
  CHECK(std::isfinite(rnd.rmse));
}

TEST_CASE("safe deployment on simionescu keeps queries feasible") {
  const problems::BenchmarkProblem p = problems::make_simionescu();

  deploy::DeployConfig config;
  config.mode = deploy::Mode::kSafeGpAl;
  config.horizon = 8;
  config.n_init = 1;
  config.gamma = 0.05;
  config.discretization = 400;
  config.seed = 5;

  gp::reset_counters();
  const deploy::RunResult run = deploy::deploy(config, p, nullptr);
  CHECK(gp::fit_count() == 17);  // two fits per step and one final
  CHECK(run.queries.rows() == 8);
  CHECK(run.safety_obs.size() == 8);
  CHECK(run.safe_fraction >= 0.5);
  CHECK(run.safe_fraction <= 1.0);
  CHECK(std::isfinite(run.rmse));

  config.mode = deploy::Mode::kSafeRandom;
  gp::reset_counters();
  const deploy::RunResult sr = deploy::deploy(config, p, nullptr);
  CHECK(gp::fit_count() == 9);  // safety fit per step and one final
  CHECK(sr.safe_fraction >= 0.0);
  CHECK(sr.safe_fraction <= 1.0);

  config.mode = deploy::Mode::kMinUnsafeGpAl;
  const deploy::RunResult mu = deploy::deploy(config, p, nullptr);
  CHECK(mu.queries.rows() == 8);
  CHECK(std::isfinite(mu.rmse));

  // Safe modes require a constraint channel.
  const problems::BenchmarkProblem sine = problems::make_sin();
  CHECK_THROWS_AS((void)deploy::deploy(config, sine, nullptr),
                  std::invalid_argument);
}

TEST_CASE("pool deployment consumes rows at most once") {
  const problems::Pool pool = synthetic_pool();
  Rng split_rng(19);
  const problems::PoolSplit split =
      problems::split_pool(split_rng, pool, 5, 2, 0.4, 0.6);

  deploy::DeployConfig config;
  config.mode = deploy::Mode::kGpAl;
  config.horizon = 10;
  config.seed = 23;

  const deploy::RunResult run =
      deploy::deploy_pool(config, split, nullptr);
  CHECK(run.queries.rows() == 10);
  REQUIRE(run.pool_indices.size() == 10);
  std::set<int> unique(run.pool_indices.begin(), run.pool_indices.end());
  CHECK(unique.size() == 10);
  for (const int idx : run.pool_indices) {
    CHECK(idx >= 0);
    CHECK(idx < split.pool.size());
  }
  for (int t = 0; t < 10; ++t) {
    const int idx = run.pool_indices[static_cast<std::size_t>(t)];
    CHECK((run.queries.row(t) - split.pool.inputs.row(idx))
              .cwiseAbs()
              .maxCoeff() == 0.0);
    CHECK(run.outputs[t] == split.pool.outputs[idx]);
    CHECK(run.safety_obs[t] == (*split.pool.safety)[idx]);
  }
  CHECK(std::isfinite(run.rmse));

  // The amortized policy projects its continuous query onto the pool.
  const asal::policy::PolicyParams params = tiny_policy(2, false);
  deploy::DeployConfig pconfig;
  pconfig.mode = deploy::Mode::kPolicy;
  pconfig.horizon = 12;
  pconfig.seed = 29;
  gp::reset_counters();
  const deploy::RunResult prun =
      deploy::deploy_pool(pconfig, split, &params);
  CHECK(gp::fit_count() == 1);
  REQUIRE(prun.pool_indices.size() == 12);
  std::set<int> punique(prun.pool_indices.begin(), prun.pool_indices.end());
  CHECK(punique.size() == 12);

  // Safe pool mode: safety comes from the recorded z channel.
  deploy::DeployConfig sconfig;
  sconfig.mode = deploy::Mode::kSafeGpAl;
  sconfig.horizon = 6;
  sconfig.gamma = 0.25;
  sconfig.seed = 31;
  const deploy::RunResult srun =
      deploy::deploy_pool(sconfig, split, nullptr);
  CHECK(srun.queries.rows() == 6);
  CHECK(srun.safe_fraction >= 0.0);
  CHECK(srun.safe_fraction <= 1.0);

  // A horizon larger than the pool cannot be served.
  deploy::DeployConfig big = config;
  big.horizon = split.pool.size() + 1;
  CHECK_THROWS_AS((void)deploy::deploy_pool(big, split, nullptr),
                  std::invalid_argument);
}
