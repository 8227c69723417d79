#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string_view>
#include <vector>

#include "asal/dataset.hpp"
#include "asal/gp.hpp"
#include "asal/policy.hpp"
#include "asal/problems.hpp"
#include "asal/rng.hpp"

namespace asal::deploy {

enum class Mode {
  kPolicy,
  kGpAl,
  kSafeGpAl,
  kMinUnsafeGpAl,
  kRandom,
  kSafeRandom,
};

const char* mode_name(Mode mode);
Mode parse_mode(std::string_view name);
// Safe modes filter or penalize by the estimated safety probability and
// require a constraint channel on the problem.
bool mode_is_safe(Mode mode);

struct DeployConfig {
  Mode mode = Mode::kGpAl;
  int horizon = 20;  // T
  int n_init = 1;
  double gamma = 0.05;
  // Candidate count for continuous problems. Candidates are redrawn fresh
  // each step by default; a fixed set drawn once per run is available for
  // the pool-analogy behavior.
  int discretization = 5000;
  bool resample_candidates = true;
  std::uint64_t seed = 0;
  gp::FitOptions fit;
  // Cross-checks the process-wide fit and factorization counters after every
  // step. Exact only while this run is the sole GP user in the process, so
  // concurrent grid runs turn it off.
  bool strict_counters = true;
  void validate() const;
};

// Index into the candidate set; fallback marks an empty safe set resolved by
// taking the candidate with the highest safety probability.
struct StepChoice {
  int index = -1;
  bool fallback = false;
};

// Fit a GP on the history and take the candidate with maximal predictive
// entropy.
StepChoice conventional_al_step(const Dataset& history,
                                const Eigen::MatrixXd& candidates,
                                const gp::FitOptions& options = {});

// Fit task and safety GPs; maximize entropy over candidates whose estimated
// safety probability clears 1 - gamma, falling back to the safest candidate
// when none do.
StepChoice safe_al_step(const Dataset& history,
                        const Eigen::MatrixXd& candidates, double gamma,
                        const gp::FitOptions& options = {});

// Unconstrained argmax of entropy minus log max(gamma, p(z < 0)).
StepChoice minunsafe_al_step(const Dataset& history,
                             const Eigen::MatrixXd& candidates, double gamma,
                             const gp::FitOptions& options = {});

// Uniform choice over the candidate set.
StepChoice random_step(Rng& rng, int candidate_count);

// Uniform choice over the gamma-filtered safe set, same fallback as the
// safe entropy step.
StepChoice safe_random_step(Rng& rng, const Dataset& history,
                            const Eigen::MatrixXd& candidates, double gamma,
                            const gp::FitOptions& options = {});

// Row of pool_inputs closest to x in L2 among rows not yet queried; ties
// resolve to the lowest index.
int nearest_unqueried(const Eigen::MatrixXd& pool_inputs,
                      const std::vector<bool>& queried,
                      const Eigen::VectorXd& x);

struct RunResult {
  Eigen::MatrixXd queries;            // T x D
  Eigen::VectorXd outputs;            // T
  Eigen::VectorXd safety_obs;         // T, empty when unconstrained
  std::vector<double> query_seconds;  // selection time, excludes the oracle
                                      // call and the final fit
  gp::FitResult final_fit;            // fitted on all collected data
  double rmse = 0.0;
  double safe_fraction = 1.0;  // fraction of queries with true q >= 0
  int fallback_count = 0;
  std::vector<int> pool_indices;  // pool runs: consumed rows, in order
};

// Run one deployment on an analytic problem. Initial data are drawn from the
// problem's seed box (rejecting unsafe observations when constrained), the
// test set is drawn from the same stream, and after the query loop a single
// GP is fitted on everything collected to score RMSE against the noise-free
// truth. `policy` is required exactly for the policy mode.
RunResult deploy(const DeployConfig& config,
                 const problems::BenchmarkProblem& problem,
                 const policy::PolicyParams* policy);

// Run one deployment against a fixed pool split: history starts from
// split.initial, candidates are the unqueried rows of split.pool, each query
// consumes its row, and RMSE is scored on split.test's recorded outputs. The
// policy mode projects its continuous query to the nearest unqueried row.
RunResult deploy_pool(const DeployConfig& config,
                      const problems::PoolSplit& split,
                      const policy::PolicyParams* policy);

}  // namespace asal::deploy
