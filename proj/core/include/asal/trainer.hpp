#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "asal/objectives.hpp"
#include "asal/policy.hpp"
#include "asal/rng.hpp"
#include "asal/task_sampler.hpp"

namespace asal::trainer {

// Rectified adaptive-moment optimizer (RAdam) over the policy's flat tensor
// list. Default moment constants; the update is unrectified plain momentum
// while the variance estimate is still short-horizon.
class RAdam {
 public:
  explicit RAdam(const std::vector<Eigen::MatrixXd>& tensors);

  void step(std::vector<Eigen::MatrixXd>& tensors,
            const std::vector<Eigen::MatrixXd>& grads, double lr);

  std::int64_t step_count() const { return step_; }
  const std::vector<Eigen::MatrixXd>& moment1() const { return m_; }
  const std::vector<Eigen::MatrixXd>& moment2() const { return v_; }

  // Reinstates a saved optimizer trajectory; shapes must match.
  void restore(std::vector<Eigen::MatrixXd> m, std::vector<Eigen::MatrixXd> v,
               std::int64_t steps);

  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

 private:
  std::int64_t step_ = 0;
  std::vector<Eigen::MatrixXd> m_;
  std::vector<Eigen::MatrixXd> v_;
};

struct TrainConfig {
  int dim = 1;
  int horizon = 20;  // T, the maximum simulated budget
  int n_init = 1;
  objectives::Objective objective = objectives::Objective::kMutualInfo;
  double gamma = 0.05;

  // Batch structure per optimizer step: n_hyper hyperparameter sets, n_pairs
  // function pairs per set, n_noise observation-noise realizations per pair.
  // For the contrastive objective, n_pairs is instead the number of
  // contrastive functions per set (one realized rollout function each).
  int n_hyper = 10;
  int n_pairs = 5;
  int n_noise = 1;

  int n_features = 100;  // spectral features per sampled function
  int n_grid = 100;      // marginalization grid size (mutual-info variants)

  double learning_rate = 1e-3;
  double lr_decay = 0.02;
  int decay_interval = 50;
  int total_steps = 10000;
  int epoch_length = 50;

  int heldout_tasks = 32;
  int heldout_points = 200;

  std::uint64_t seed = 0;
  policy::PolicyConfig policy;

  // Tasks are sampled with a constraint branch when the objective scores
  // safety or the policy consumes a safety history. The latter keeps random
  // streams aligned between safety-penalized and plain-entropy runs.
  bool constrained() const;
  TaskSamplerOptions sampler_options() const;
  void validate() const;
};

// One scoring instance: a task realization, a simulated budget, and the
// pre-drawn observation noises (interleaved y, z per step, matching the
// draw order of rollout_policy). Mutual-info variants carry a noisy
// marginalization grid; the contrastive objective indexes a per-set pool.
struct Instance {
  Task task;
  int t_sim = 1;
  Eigen::VectorXd noise_y;
  Eigen::VectorXd noise_z;  // zero length for unconstrained tasks
  Dataset grid;
  int set = 0;
};

struct Batch {
  std::vector<Instance> instances;  // flattened in reduction order
  std::vector<std::vector<FourierFunction>> contrastive;  // per hyper set
};

// Draws one optimizer step's worth of tasks and noises. The budget variable
// is shared across the noise realizations of a pair and is fixed at the
// horizon when the policy has no budget input. Realizations beyond the first
// reuse the pair's initial inputs with fresh observation noise.
Batch assemble_batch(Rng& rng, const TrainConfig& config);

struct InstanceEval {
  double score = 0.0;  // objective value (maximized)
  double loss = 0.0;   // -score / (n_init + t_sim)
  Eigen::MatrixXd queries;
  Eigen::VectorXd outputs;
  std::vector<Eigen::MatrixXd> grads;  // d loss / d params, layout order
};

// Differentiable rollout and score of a single instance. The rollout queries
// equal rollout_policy's bitwise, given the same noises.
InstanceEval eval_instance(const policy::PolicyParams& params,
                           const TrainConfig& config, const Batch& batch,
                           int index);

struct StepResult {
  double loss = 0.0;
  bool skipped = false;  // non-finite loss or gradient; parameters untouched
};

// One optimizer step: assemble, evaluate each instance, reduce in instance
// order, update. Skips the update when the reduced loss or any gradient
// entry is non-finite.
StepResult train_step(policy::PolicyParams& params, RAdam& opt, double lr,
                      Rng& rng, const TrainConfig& config);

// Deployment-style rollout: queries from forward passes only, observations
// from the task functions. Noise is drawn per step as (y, z). The returned
// rollout references `task`, which must outlive it.
objectives::Rollout rollout_policy(const policy::PolicyParams& params,
                                   const Task& task, int t_sim, int horizon,
                                   Rng& rng);
objectives::Rollout rollout_policy(const policy::PolicyParams& params,
                                   const Task& task, int t_sim, int horizon,
                                   const Eigen::VectorXd& noise_y,
                                   const Eigen::VectorXd& noise_z);

// Posterior-mean RMSE against the true function at uniformly drawn test
// points, with the GP conditioned on init + queries under the task's own
// generating hyperparameters.
double gp_test_rmse(const Task& task, const Eigen::MatrixXd& queries,
                    const Eigen::VectorXd& outputs, int n_points, Rng& rng);

// Mean gp_test_rmse over freshly sampled tasks, each deployed for the full
// horizon.
double heldout_rmse(const policy::PolicyParams& params,
                    const TrainConfig& config, Rng& rng);

struct StepRecord {
  int step = 0;
  double loss = 0.0;
  double lr = 0.0;
  bool skipped = false;
};

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0.0;  // over the epoch's non-skipped steps
  double gp_rmse = 0.0;    // held-out deployment monitoring
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
};

struct TrainResult {
  policy::PolicyParams policy;  // snapshot with the best recent epoch loss
  TrainLog log;
  int selected_epoch = -1;
  int skipped_steps = 0;
};

// Full training loop: total_steps steps in epochs of epoch_length, learning
// rate decayed by lr_decay every decay_interval steps, held-out monitoring
// at each epoch end. Returns the end-of-epoch snapshot with the lowest mean
// training loss among the final 10 epochs. When `stream` is given, each
// step and epoch record is appended as one JSON line. `warm_start` replaces
// the freshly initialized parameters (shapes must match the config).
// Aborts after 20 consecutive skipped steps.
TrainResult train(const TrainConfig& config, std::ostream* stream = nullptr,
                  const policy::PolicyParams* warm_start = nullptr);

// Contrastive-objective convenience; requires the budget-free, safety-free
// policy shape and a fixed simulated budget at the horizon.
TrainResult train_dad(const TrainConfig& config,
                      std::ostream* stream = nullptr);

// Complete loop state at an epoch boundary: parameters, optimizer moments,
// both random streams, the skip counters, and the snapshot window. Restoring
// it continues training exactly as if the run had never stopped, so the
// continuation's losses match the uninterrupted run's step for step.
struct TrainState {
  int next_step = 0;  // first step still to run; multiple of epoch_length
  std::vector<Eigen::MatrixXd> tensors;
  std::vector<Eigen::MatrixXd> opt_m;
  std::vector<Eigen::MatrixXd> opt_v;
  std::int64_t opt_steps = 0;
  std::string rng_state;       // training stream
  std::string eval_rng_state;  // held-out monitoring stream
  int skipped_steps = 0;
  int consecutive_skips = 0;

  struct Snapshot {
    int epoch = -1;
    double mean_loss = 0.0;
    std::vector<Eigen::MatrixXd> tensors;
  };
  std::vector<Snapshot> snapshots;
};

// Binary state file; the write lands via a temporary plus rename so an
// interrupted save never corrupts the previous state.
void save_train_state(const TrainState& state, const std::string& path);
TrainState load_train_state(const std::string& path);

// train() with persistence: when `state_out` is non-empty the loop state is
// rewritten there after every epoch. `resume` continues a saved state under
// the same configuration; the state must sit on an epoch boundary.
TrainResult train_resumable(const TrainConfig& config,
                            const std::string& state_out,
                            const TrainState* resume = nullptr,
                            std::ostream* stream = nullptr);

}  // namespace asal::trainer
