#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "asal/dataset.hpp"
#include "asal/rng.hpp"
#include "asal/tape.hpp"

namespace asal::policy {

// Query network: maps a remaining budget and the observation history to the
// next query location in [0,1]^D. Observation pairs are embedded by a shared
// two-layer map, optionally attended by a two-layer transformer encoder, and
// sum-pooled; the pooled embeddings (task branch, optional safety branch,
// optional budget embedding) feed a decision map whose tanh output is
// rescaled to the unit cube. The sum pool makes the output invariant to the
// order of history rows, bit for bit.
struct PolicyConfig {
  enum class Mode { kAttention, kDeepSet };

  int dim = 1;
  int embed_dim = 128;
  bool has_safety_branch = false;
  bool has_budget_input = true;
  Mode mode = Mode::kAttention;
  int hidden = 512;         // MLP width (data embed, budget, decision)
  int encoder_layers = 2;
  int head_dim = 16;        // attention heads = embed_dim / head_dim

  int heads() const { return embed_dim / head_dim; }
  void validate() const;
};

struct TensorSpec {
  enum class Init { kFanInUniform, kZero, kOne };
  std::string name;
  int rows = 0;
  int cols = 0;
  Init init = Init::kFanInUniform;
};

// Flat parameter schema in a fixed order; the same order is used for
// initialization, checkpoints, gradients, and optimizer state.
std::vector<TensorSpec> layout(const PolicyConfig& config);

struct PolicyParams {
  PolicyConfig config;
  std::vector<Eigen::MatrixXd> tensors;

  std::int64_t parameter_count() const;
};

// Weights ~ U[-sqrt(1/fan_in), +sqrt(1/fan_in)], biases zero, normalization
// gains one. Deterministic in the generator state.
PolicyParams init_policy(const PolicyConfig& config, Rng& rng);

// Parameters registered on a tape, as gradient-tracked inputs (training) or
// constants (deployment).
struct BoundPolicy {
  const PolicyConfig* config = nullptr;
  std::vector<tape::Var> params;
};
BoundPolicy bind_policy(tape::Tape& t, const PolicyParams& params,
                        bool trainable);

// One forward pass. `task_history` is n x (D+1) rows of (x, y); the safety
// history is m x (D+1) rows of (x, z) and must be present exactly when the
// config has a safety branch. `budget_scaled` is the remaining budget
// divided by the training horizon. Returns a 1 x D node in [0,1]^D.
// Throws on an empty task history.
tape::Var policy_step(tape::Tape& t, const BoundPolicy& bound,
                      tape::Var task_history,
                      std::optional<tape::Var> safety_history,
                      double budget_scaled);

// Deployment convenience: runs one forward on a private tape with constant
// parameters and history. Touches no GP algebra.
Eigen::VectorXd policy_query(const PolicyParams& params, int budget_remaining,
                             int budget_horizon, const Dataset& history);

// Self-describing binary checkpoint; round-trips bit-exactly.
void save_checkpoint(const PolicyParams& params, const std::string& path);
PolicyParams load_checkpoint(const std::string& path);

}  // namespace asal::policy
