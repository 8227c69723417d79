#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>

#include "asal/dataset.hpp"
#include "asal/fourier.hpp"
#include "asal/kernel.hpp"
#include "asal/rng.hpp"

namespace asal {

// Generative hyperparameters for one simulated task. The total kernel budget
// (mean-squared scale of observations) is held at 1.0001 for both branches:
//   objective:  variance + noise_var = 1.0001
//   constraint: c^2 + q_variance + q_noise_var = 1.0001
struct TaskHyperParams {
  KernelParams f_kernel;
  double f_noise_var = 1e-4;
  std::optional<KernelParams> q_kernel;
  double q_noise_var = 0.0;
  std::optional<SechMeanParams> q_mean;
};

struct TaskSamplerOptions {
  int dim = 1;
  bool constrained = false;
  int n_init = 1;
  int n_features = 100;
  double c = std::sqrt(0.5);  // prior-mean scale of the constraint branch
  double safe_region_lo = 0.4;
  double safe_region_hi = 0.6;
  int max_initial_draws = 50;
};

// One simulated task: sampled functions plus initial observations.
struct Task {
  TaskHyperParams hp;
  FourierFunction f;
  std::optional<FourierFunction> q;
  Dataset init;
  bool init_fallback = false;  // safe initial sampling hit the retry cap
};

TaskHyperParams sample_hyperparams(Rng& rng, const TaskSamplerOptions& opt);

// Functions and initial data for fixed hyperparameters (several function
// draws can share one hyperparameter draw).
Task sample_task_functions(Rng& rng, const TaskHyperParams& hp,
                           const TaskSamplerOptions& opt);

Task sample_task(Rng& rng, const TaskSamplerOptions& opt);

// Rejection sampler for initial observations inside the central region with
// nonnegative observed safety values; accepts the final draw wholesale after
// max_draws attempts (flagged via the return's second member).
struct SafeInitialResult {
  Dataset data;
  bool fallback = false;
};
SafeInitialResult sample_safe_initial(Rng& rng, const FourierFunction& f,
                                      const FourierFunction& q,
                                      double f_noise_var, double q_noise_var,
                                      int n_init, double region_lo,
                                      double region_hi, int max_draws);

// Marginalization grid: i.i.d. Beta(1/2, 1/2) per coordinate, biased toward
// the domain boundary.
Eigen::MatrixXd sample_grid(Rng& rng, int n, int dim);

}  // namespace asal
