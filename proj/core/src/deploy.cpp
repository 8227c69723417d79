#include "asal/deploy.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

#include "asal/objectives.hpp"

namespace asal::deploy {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

double marginal_entropy(double var) {
  return 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e * var);
}

int entropy_argmax(const gp::Marginals& marg, const std::vector<int>* subset) {
  int best = -1;
  double best_score = -std::numeric_limits<double>::infinity();
  const int n = subset ? static_cast<int>(subset->size())
                       : static_cast<int>(marg.var.size());
  for (int k = 0; k < n; ++k) {
    const int i = subset ? (*subset)[static_cast<std::size_t>(k)] : k;
    const double score = marginal_entropy(marg.var[i]);
    if (score > best_score) {
      best_score = score;
      best = i;
    }
  }
  return best;
}

void require_safety(const Dataset& history, const char* who) {
  if (!history.safety) {
    throw std::invalid_argument(std::string(who) +
                                ": history has no safety observations");
  }
}

// Safety probabilities p(z >= 0) at the candidates under a freshly fitted
// safety GP.
Eigen::VectorXd safety_probs(const Dataset& history,
                             const Eigen::MatrixXd& candidates,
                             const gp::FitOptions& options) {
  const gp::FitResult fit =
      gp::fit_type2_ml(history.inputs, *history.safety, options);
  const gp::Marginals marg = gp::posterior_marginals(
      history.inputs, *history.safety, candidates, fit.kernel, fit.noise_var);
  Eigen::VectorXd p(candidates.rows());
  for (int i = 0; i < p.size(); ++i) {
    p[i] = gp::safety_prob_nonneg(marg.mean[i], marg.var[i]);
  }
  return p;
}

int argmax(const Eigen::VectorXd& v) {
  int best = 0;
  for (int i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

}  // namespace

const char* mode_name(Mode mode) {
  switch (mode) {
    case Mode::kPolicy: return "policy";
    case Mode::kGpAl: return "gp_al";
    case Mode::kSafeGpAl: return "safe_gp_al";
    case Mode::kMinUnsafeGpAl: return "minunsafe_gp_al";
    case Mode::kRandom: return "random";
    case Mode::kSafeRandom: return "safe_random";
  }
  throw std::logic_error("deploy: unknown mode");
}

Mode parse_mode(std::string_view name) {
  if (name == "policy") return Mode::kPolicy;
  if (name == "gp_al") return Mode::kGpAl;
  if (name == "safe_gp_al") return Mode::kSafeGpAl;
  if (name == "minunsafe_gp_al") return Mode::kMinUnsafeGpAl;
  if (name == "random") return Mode::kRandom;
  if (name == "safe_random") return Mode::kSafeRandom;
  throw std::invalid_argument("unknown deployment mode: " + std::string(name));
}

bool mode_is_safe(Mode mode) {
  return mode == Mode::kSafeGpAl || mode == Mode::kMinUnsafeGpAl ||
         mode == Mode::kSafeRandom;
}

void DeployConfig::validate() const {
  if (horizon < 1) throw std::invalid_argument("deploy: horizon must be >= 1");
  if (n_init < 1) throw std::invalid_argument("deploy: n_init must be >= 1");
  if (mode_is_safe(mode) && !(gamma > 0.0 && gamma <= 1.0)) {
    throw std::invalid_argument("deploy: gamma must lie in (0, 1]");
  }
  if (discretization < horizon) {
    throw std::invalid_argument(
        "deploy: discretization must cover the horizon");
  }
}

StepChoice conventional_al_step(const Dataset& history,
                                const Eigen::MatrixXd& candidates,
                                const gp::FitOptions& options) {
  const gp::FitResult fit =
      gp::fit_type2_ml(history.inputs, history.outputs, options);
  const gp::Marginals marg = gp::posterior_marginals(
      history.inputs, history.outputs, candidates, fit.kernel, fit.noise_var);
  StepChoice choice;
  choice.index = entropy_argmax(marg, nullptr);
  return choice;
}

StepChoice safe_al_step(const Dataset& history,
                        const Eigen::MatrixXd& candidates, double gamma,
                        const gp::FitOptions& options) {
  require_safety(history, "safe step");
  const gp::FitResult fit =
      gp::fit_type2_ml(history.inputs, history.outputs, options);
  const gp::Marginals marg = gp::posterior_marginals(
      history.inputs, history.outputs, candidates, fit.kernel, fit.noise_var);
  const Eigen::VectorXd p = safety_probs(history, candidates, options);

  std::vector<int> survivors;
  for (int i = 0; i < p.size(); ++i) {
    if (p[i] >= 1.0 - gamma) survivors.push_back(i);
  }
  StepChoice choice;
  if (survivors.empty()) {
    choice.index = argmax(p);
    choice.fallback = true;
  } else {
    choice.index = entropy_argmax(marg, &survivors);
  }
  return choice;
}

StepChoice minunsafe_al_step(const Dataset& history,
                             const Eigen::MatrixXd& candidates, double gamma,
                             const gp::FitOptions& options) {
  require_safety(history, "penalty step");
  const gp::FitResult tf =
      gp::fit_type2_ml(history.inputs, history.outputs, options);
  const gp::Marginals fm = gp::posterior_marginals(
      history.inputs, history.outputs, candidates, tf.kernel, tf.noise_var);
  const gp::FitResult sf =
      gp::fit_type2_ml(history.inputs, *history.safety, options);
  const gp::Marginals sm = gp::posterior_marginals(
      history.inputs, *history.safety, candidates, sf.kernel, sf.noise_var);
  const Eigen::VectorXd scores = objectives::minunsafe_scores(fm, sm, gamma);
  StepChoice choice;
  choice.index = argmax(scores);
  return choice;
}

StepChoice random_step(Rng& rng, int candidate_count) {
  if (candidate_count < 1) {
    throw std::invalid_argument("random step: empty candidate set");
  }
  StepChoice choice;
  choice.index = static_cast<int>(
      rng.integer(static_cast<std::uint64_t>(candidate_count)));
  return choice;
}

StepChoice safe_random_step(Rng& rng, const Dataset& history,
                            const Eigen::MatrixXd& candidates, double gamma,
                            const gp::FitOptions& options) {
  require_safety(history, "safe random step");
  const Eigen::VectorXd p = safety_probs(history, candidates, options);
  std::vector<int> survivors;
  for (int i = 0; i < p.size(); ++i) {
    if (p[i] >= 1.0 - gamma) survivors.push_back(i);
  }
  StepChoice choice;
  if (survivors.empty()) {
    choice.index = argmax(p);
    choice.fallback = true;
  } else {
    const std::size_t k = static_cast<std::size_t>(
        rng.integer(static_cast<std::uint64_t>(survivors.size())));
    choice.index = survivors[k];
  }
  return choice;
}

int nearest_unqueried(const Eigen::MatrixXd& pool_inputs,
                      const std::vector<bool>& queried,
                      const Eigen::VectorXd& x) {
  if (static_cast<int>(queried.size()) != pool_inputs.rows()) {
    throw std::invalid_argument("nearest: mask/pool size mismatch");
  }
  int best = -1;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (int i = 0; i < pool_inputs.rows(); ++i) {
    if (queried[static_cast<std::size_t>(i)]) continue;
    const double d2 = (pool_inputs.row(i) - x.transpose()).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best = i;
    }
  }
  if (best < 0) throw std::invalid_argument("nearest: pool exhausted");
  return best;
}

namespace {

// Per-step fit budget by mode, asserted against the process-wide counter.
// Runs are sequential, so counter deltas are attributable to the step.
int expected_fits(Mode mode) {
  switch (mode) {
    case Mode::kPolicy:
    case Mode::kRandom: return 0;
    case Mode::kGpAl: return 1;
    case Mode::kSafeGpAl:
    case Mode::kMinUnsafeGpAl: return 2;
    case Mode::kSafeRandom: return 1;
  }
  throw std::logic_error("deploy: unknown mode");
}

Eigen::MatrixXd draw_candidates(Rng& rng, int count, int dim) {
  Eigen::MatrixXd c(count, dim);
  for (int i = 0; i < count; ++i) {
    for (int j = 0; j < dim; ++j) c(i, j) = rng.uniform();
  }
  return c;
}

struct StepOutcome {
  Eigen::VectorXd x;
  bool fallback = false;
  int pool_index = -1;
};

// One selection on an explicit candidate matrix. pool_rows maps candidate
// rows back to pool indices when the candidates are a pool remainder.
StepOutcome select_from_candidates(const DeployConfig& config, Rng& rng,
                                   const Dataset& history,
                                   const Eigen::MatrixXd& candidates,
                                   const std::vector<int>* pool_rows) {
  StepChoice choice;
  switch (config.mode) {
    case Mode::kGpAl:
      choice = conventional_al_step(history, candidates, config.fit);
      break;
    case Mode::kSafeGpAl:
      choice = safe_al_step(history, candidates, config.gamma, config.fit);
      break;
    case Mode::kMinUnsafeGpAl:
      choice =
          minunsafe_al_step(history, candidates, config.gamma, config.fit);
      break;
    case Mode::kRandom:
      choice = random_step(rng, static_cast<int>(candidates.rows()));
      break;
    case Mode::kSafeRandom:
      choice = safe_random_step(rng, history, candidates, config.gamma,
                                config.fit);
      break;
    case Mode::kPolicy:
      throw std::logic_error("deploy: policy mode has no candidate step");
  }
  StepOutcome out;
  out.x = candidates.row(choice.index).transpose();
  out.fallback = choice.fallback;
  if (pool_rows) {
    out.pool_index = (*pool_rows)[static_cast<std::size_t>(choice.index)];
  }
  return out;
}

void check_policy_arg(const DeployConfig& config,
                      const policy::PolicyParams* params) {
  if (config.mode == Mode::kPolicy && params == nullptr) {
    throw std::invalid_argument("deploy: policy mode requires parameters");
  }
}

double finish_run(RunResult& run, const Dataset& history,
                  const Eigen::MatrixXd& test_inputs,
                  const Eigen::VectorXd& test_truth,
                  const gp::FitOptions& options) {
  run.final_fit = gp::fit_type2_ml(history.inputs, history.outputs, options);
  const gp::Marginals marg = gp::posterior_marginals(
      history.inputs, history.outputs, test_inputs, run.final_fit.kernel,
      run.final_fit.noise_var);
  double sq = 0.0;
  for (int i = 0; i < test_truth.size(); ++i) {
    const double err = marg.mean[i] - test_truth[i];
    sq += err * err;
  }
  run.rmse = std::sqrt(sq / test_truth.size());
  return run.rmse;
}

}  // namespace

RunResult deploy(const DeployConfig& config,
                 const problems::BenchmarkProblem& problem,
                 const policy::PolicyParams* params) {
  config.validate();
  check_policy_arg(config, params);
  const bool constrained = problem.constrained();
  if (mode_is_safe(config.mode) && !constrained) {
    throw std::invalid_argument("deploy: safe mode on unconstrained problem");
  }
  const int dim = problem.dimension;
  const int T = config.horizon;
  Rng rng(config.seed);

  // Initial data from the seed box; constrained problems keep redrawing a
  // point until its noisy safety observation is nonnegative.
  Dataset history;
  history.inputs.resize(0, dim);
  if (constrained) history.safety = Eigen::VectorXd(0);
  Eigen::VectorXd x(dim);
  for (int i = 0; i < config.n_init; ++i) {
    int attempts = 0;
    for (;;) {
      for (int j = 0; j < dim; ++j) {
        x[j] = problem.seed_lo + (problem.seed_hi - problem.seed_lo) *
                                     rng.uniform();
      }
      const double y = problem.f(x) + rng.normal(0.0, problem.noise_std_f);
      if (!constrained) {
        history.append(x, y);
        break;
      }
      const double z = problem.q(x) + rng.normal(0.0, problem.noise_std_q);
      if (z >= 0.0) {
        history.append(x, y, z);
        break;
      }
      if (++attempts >= 1000) {
        throw std::runtime_error(problem.name +
                                 ": no safe initial point found");
      }
    }
  }

  const Eigen::MatrixXd test_inputs = problem.sample_test_inputs(rng);
  Eigen::VectorXd test_truth(test_inputs.rows());
  for (int i = 0; i < test_inputs.rows(); ++i) {
    test_truth[i] = problem.f(test_inputs.row(i).transpose());
  }

  Eigen::MatrixXd fixed;
  if (config.mode != Mode::kPolicy && !config.resample_candidates) {
    fixed = draw_candidates(rng, config.discretization, dim);
  }

  RunResult run;
  run.queries.resize(T, dim);
  run.outputs.resize(T);
  if (constrained) run.safety_obs.resize(T);
  run.query_seconds.reserve(static_cast<std::size_t>(T));

  const std::uint64_t chol_before = gp::cholesky_count();
  int true_safe = 0;
  for (int t = 0; t < T; ++t) {
    const std::uint64_t fits_before = gp::fit_count();
    const Clock::time_point start = Clock::now();
    Eigen::VectorXd xq;
    bool fallback = false;
    if (config.mode == Mode::kPolicy) {
      xq = policy::policy_query(*params, T - t, T, history);
    } else {
      const Eigen::MatrixXd candidates =
          config.resample_candidates
              ? draw_candidates(rng, config.discretization, dim)
              : fixed;
      const StepOutcome out =
          select_from_candidates(config, rng, history, candidates, nullptr);
      xq = out.x;
      fallback = out.fallback;
    }
    run.query_seconds.push_back(seconds_since(start));
    if (config.strict_counters &&
        gp::fit_count() - fits_before !=
            static_cast<std::uint64_t>(expected_fits(config.mode))) {
      throw std::logic_error("deploy: unexpected fit count in query step");
    }
    if (fallback) ++run.fallback_count;

    double y = 0.0, z = 0.0;
    try {
      y = problem.f(xq) + rng.normal(0.0, problem.noise_std_f);
      if (constrained) {
        z = problem.q(xq) + rng.normal(0.0, problem.noise_std_q);
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("deploy: evaluation failed after " +
                               std::to_string(t) + " queries: " + e.what());
    }
    run.queries.row(t) = xq.transpose();
    run.outputs[t] = y;
    if (constrained) {
      run.safety_obs[t] = z;
      if (problem.q(xq) >= 0.0) ++true_safe;
      history.append(xq, y, z);
    } else {
      history.append(xq, y);
    }
  }
  if (config.strict_counters && config.mode == Mode::kPolicy &&
      gp::cholesky_count() != chol_before) {
    throw std::logic_error(
        "deploy: policy run factorized a gram matrix during the query loop");
  }
  run.safe_fraction =
      constrained ? static_cast<double>(true_safe) / T : 1.0;

  finish_run(run, history, test_inputs, test_truth, config.fit);
  return run;
}

RunResult deploy_pool(const DeployConfig& config,
                      const problems::PoolSplit& split,
                      const policy::PolicyParams* params) {
  config.validate();
  check_policy_arg(config, params);
  const bool constrained = split.pool.safety.has_value();
  if (mode_is_safe(config.mode) && !constrained) {
    throw std::invalid_argument("deploy: safe mode on unconstrained pool");
  }
  const int T = config.horizon;
  if (T > split.pool.size()) {
    throw std::invalid_argument("deploy: horizon exceeds the pool size");
  }
  const int dim = split.pool.dim();
  Rng rng(config.seed);

  Dataset history = split.initial;
  std::vector<bool> queried(static_cast<std::size_t>(split.pool.size()),
                            false);

  RunResult run;
  run.queries.resize(T, dim);
  run.outputs.resize(T);
  if (constrained) run.safety_obs.resize(T);
  run.query_seconds.reserve(static_cast<std::size_t>(T));
  run.pool_indices.reserve(static_cast<std::size_t>(T));

  const std::uint64_t chol_before = gp::cholesky_count();
  int true_safe = 0;
  for (int t = 0; t < T; ++t) {
    const std::uint64_t fits_before = gp::fit_count();
    const Clock::time_point start = Clock::now();
    int idx = -1;
    bool fallback = false;
    if (config.mode == Mode::kPolicy) {
      const Eigen::VectorXd xq =
          policy::policy_query(*params, T - t, T, history);
      idx = nearest_unqueried(split.pool.inputs, queried, xq);
    } else {
      std::vector<int> rows;
      for (int i = 0; i < split.pool.size(); ++i) {
        if (!queried[static_cast<std::size_t>(i)]) rows.push_back(i);
      }
      Eigen::MatrixXd candidates(static_cast<int>(rows.size()), dim);
      for (std::size_t k = 0; k < rows.size(); ++k) {
        candidates.row(static_cast<int>(k)) =
            split.pool.inputs.row(rows[k]);
      }
      const StepOutcome out =
          select_from_candidates(config, rng, history, candidates, &rows);
      idx = out.pool_index;
      fallback = out.fallback;
    }
    run.query_seconds.push_back(seconds_since(start));
    if (config.strict_counters &&
        gp::fit_count() - fits_before !=
            static_cast<std::uint64_t>(expected_fits(config.mode))) {
      throw std::logic_error("deploy: unexpected fit count in query step");
    }
    if (fallback) ++run.fallback_count;

    queried[static_cast<std::size_t>(idx)] = true;
    run.pool_indices.push_back(idx);
    const double y = split.pool.outputs[idx];
    run.queries.row(t) = split.pool.inputs.row(idx);
    run.outputs[t] = y;
    if (constrained) {
      const double z = (*split.pool.safety)[idx];
      run.safety_obs[t] = z;
      if (z >= 0.0) ++true_safe;
      history.append(split.pool.inputs.row(idx).transpose(), y, z);
    } else {
      history.append(split.pool.inputs.row(idx).transpose(), y);
    }
  }
  if (config.strict_counters && config.mode == Mode::kPolicy &&
      gp::cholesky_count() != chol_before) {
    throw std::logic_error(
        "deploy: policy run factorized a gram matrix during the query loop");
  }
  run.safe_fraction =
      constrained ? static_cast<double>(true_safe) / T : 1.0;

  finish_run(run, history, split.test.inputs, split.test.outputs, config.fit);
  return run;
}

}  // namespace asal::deploy
