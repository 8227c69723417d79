#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "asal/dataset.hpp"
#include "asal/fourier.hpp"
#include "asal/gp.hpp"
#include "asal/tape.hpp"
#include "asal/task_sampler.hpp"

namespace asal::objectives {

// Training objectives for the query policy. The entropy family scores the
// conditional log-density (or predictive entropy) of the queried outputs
// under the task's generating GP; mutual-information variants subtract the
// same quantity conditioned on an extra marginalization grid; safe variants
// add a per-step penalty on the predicted probability of querying an unsafe
// location; the contrastive objective is a noise-contrastive bound on the
// information about which function generated the data.
enum class Objective {
  kEntropy,
  kEntropyMean,
  kMutualInfo,
  kMutualInfoMean,
  kSafeEntropy,
  kSafeDivision,
  kDad,
};

const char* objective_name(Objective o);
Objective parse_objective(const std::string& name);
bool needs_grid(Objective o);
bool needs_safety(Objective o);
bool needs_contrastive(Objective o);

// One simulated episode on a task: the queried locations with their noisy
// objective (and, for constrained tasks, safety) observations, plus the
// remaining-budget value fed to the policy at each step. Scores are
// deterministic functions of a rollout; all randomness is realized before
// scoring.
struct Rollout {
  const Task* task = nullptr;
  Eigen::MatrixXd queries;        // T_sim x D, inside [0,1]^D
  Eigen::VectorXd outputs;        // T_sim
  Eigen::VectorXd safety_obs;     // T_sim; empty for unconstrained tasks
  std::vector<int> budget_trace;  // remaining budget per step (optional)

  int t_sim() const { return static_cast<int>(queries.rows()); }
  void validate() const;
};

// Negative conditional log-density of the rollout outputs given the task's
// initial observations, under the true generating hyperparameters. Callers
// normalize by (N_init + T_sim) when averaging over a batch.
double entropy_score(const Rollout& r);

// Differential entropy of the conditional predictive at the queried inputs;
// ignores the realized output values.
double mean_entropy_score(const Rollout& r);

// entropy_score minus the same density additionally conditioned on the grid
// observations; zero when the grid is empty.
double mutual_info_score(const Rollout& r, const Dataset& grid);
double mean_mi_score(const Rollout& r, const Dataset& grid);

// Per-step log of the floored probability that the *predicted* safety value
// at query t is negative, conditioned on the initial safety data and the
// safety observations of strictly earlier queries:
//   log max(p(z(x_t) < 0 | prefix), max(gamma, 1e-5))
// The 1e-5 floor keeps the log finite when gamma is zero.
Eigen::VectorXd unsafe_logprob_terms(const Rollout& r, double gamma);

// entropy_score minus the summed unsafe penalties. With gamma = 1 every
// penalty term is exactly log(1) = 0 and the score reduces bitwise to
// entropy_score.
double safe_score(const Rollout& r, double gamma);

// Variant that adds the log safety probability instead of subtracting the
// clamped unsafe probability; no gamma, only the 1e-5 floor.
double safe_division_score(const Rollout& r);

// Noise-contrastive lower bound: log-likelihood of all observations (initial
// plus queried) under the generating function against the mean likelihood
// over {generating} + contrastive functions. Bounded above by
// log(N_contrastive + 1).
double dad_score(const Rollout& r,
                 const std::vector<FourierFunction>& contrastive);

// Deployment acquisition: predictive entropy of the objective observable
// minus the log of the floored unsafe probability, both under fitted
// zero-mean GPs conditioned on the full history.
double minunsafe_acquisition(const Eigen::VectorXd& x, const Dataset& history,
                             double gamma, const KernelParams& f_kernel,
                             double f_noise_var, const KernelParams& q_kernel,
                             double q_noise_var);

// Batched form over precomputed predictive marginals (one factorization for
// the whole candidate set); row i scores candidate i.
Eigen::VectorXd minunsafe_scores(const gp::Marginals& f_pred,
                                 const gp::Marginals& q_pred, double gamma);

// --- Differentiable scoring over tape variables -----------------------------

// Tape-level rollout: queries (and the outputs computed from them) live on
// the tape so every score differentiates through the query coordinates.
struct TapeRollout {
  tape::Var queries;                    // T x D
  tape::Var outputs;                    // T x 1
  std::optional<tape::Var> safety_obs;  // T x 1; present for constrained tasks
};

struct ScoreContext {
  const Task* task = nullptr;
  const Dataset* grid = nullptr;  // required by mutual-information variants
  const std::vector<FourierFunction>* contrastive = nullptr;  // kDad only
  double gamma = 0.05;
};

// Scalar (1x1) score variable; same value as the plain implementations.
tape::Var score(tape::Tape& t, Objective o, const ScoreContext& ctx,
                const TapeRollout& r);

// Central finite differences against the tape gradient for every objective
// on tiny fixed instances. `sabotage` flips the sign of one reported
// gradient entry, which must make the check fail (self-test of the checker).
struct GradCheckEntry {
  std::string objective;
  double max_rel_err = 0.0;
};
struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;
  bool pass = false;
};
GradCheckReport gradcheck_all(std::uint64_t seed, double tol = 1e-3,
                              bool sabotage = false);

}  // namespace asal::objectives
