#include "asal/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <utility>

#include "asal/gp.hpp"
#include "asal/serialize.hpp"

namespace asal::trainer {

namespace {

using policy::BoundPolicy;
using policy::PolicyParams;
using tape::Tape;
using tape::Var;

std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

// Single-row function evaluation through the same batched path as the
// differentiable rollout, so deployment observations match it bitwise.
double eval_function(const FourierFunction& f, const Eigen::VectorXd& x) {
  return f.eval_rows(x.transpose())[0];
}

}  // namespace

RAdam::RAdam(const std::vector<Eigen::MatrixXd>& tensors) {
  m_.reserve(tensors.size());
  v_.reserve(tensors.size());
  for (const Eigen::MatrixXd& t : tensors) {
    m_.push_back(Eigen::MatrixXd::Zero(t.rows(), t.cols()));
    v_.push_back(Eigen::MatrixXd::Zero(t.rows(), t.cols()));
  }
}

void RAdam::step(std::vector<Eigen::MatrixXd>& tensors,
                 const std::vector<Eigen::MatrixXd>& grads, double lr) {
  if (tensors.size() != m_.size() || grads.size() != m_.size()) {
    throw std::invalid_argument("optimizer: tensor list mismatch");
  }
  ++step_;
  const double rho_inf = 2.0 / (1.0 - beta2) - 1.0;
  const double b1t = std::pow(beta1, static_cast<double>(step_));
  const double b2t = std::pow(beta2, static_cast<double>(step_));
  const double rho =
      rho_inf - 2.0 * static_cast<double>(step_) * b2t / (1.0 - b2t);
  // Variance rectification once the moving second moment has enough
  // effective samples; plain bias-corrected momentum before that.
  const bool rectified = rho > 4.0;
  double rect = 1.0;
  if (rectified) {
    rect = std::sqrt(((rho - 4.0) * (rho - 2.0) * rho_inf) /
                     ((rho_inf - 4.0) * (rho_inf - 2.0) * rho));
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    m_[i] = beta1 * m_[i] + (1.0 - beta1) * grads[i];
    v_[i] = beta2 * v_[i] + (1.0 - beta2) * grads[i].cwiseProduct(grads[i]);
    const Eigen::MatrixXd mhat = m_[i] / (1.0 - b1t);
    if (rectified) {
      const Eigen::ArrayXXd vhat = (v_[i] / (1.0 - b2t)).array().sqrt();
      tensors[i].array() -= lr * rect * mhat.array() / (vhat + eps);
    } else {
      tensors[i] -= lr * mhat;
    }
  }
}

void RAdam::restore(std::vector<Eigen::MatrixXd> m,
                    std::vector<Eigen::MatrixXd> v, std::int64_t steps) {
  if (m.size() != m_.size() || v.size() != v_.size() || steps < 0) {
    throw std::invalid_argument("optimizer: restore state mismatch");
  }
  for (std::size_t i = 0; i < m_.size(); ++i) {
    if (m[i].rows() != m_[i].rows() || m[i].cols() != m_[i].cols() ||
        v[i].rows() != v_[i].rows() || v[i].cols() != v_[i].cols()) {
      throw std::invalid_argument("optimizer: restore shape mismatch");
    }
  }
  m_ = std::move(m);
  v_ = std::move(v);
  step_ = steps;
}

bool TrainConfig::constrained() const {
  return objectives::needs_safety(objective) || policy.has_safety_branch;
}

TaskSamplerOptions TrainConfig::sampler_options() const {
  TaskSamplerOptions opt;
  opt.dim = dim;
  opt.constrained = constrained();
  opt.n_init = n_init;
  opt.n_features = n_features;
  return opt;
}

void TrainConfig::validate() const {
  policy.validate();
  if (policy.dim != dim) {
    throw std::invalid_argument("trainer: policy dimension mismatch");
  }
  if (horizon < 1) throw std::invalid_argument("trainer: horizon must be >= 1");
  if (n_init < 1) throw std::invalid_argument("trainer: n_init must be >= 1");
  if (n_hyper < 1 || n_pairs < 1 || n_noise < 1) {
    throw std::invalid_argument("trainer: batch sizes must be positive");
  }
  if (n_features < 1) {
    throw std::invalid_argument("trainer: n_features must be >= 1");
  }
  if (objectives::needs_grid(objective) && n_grid < 1) {
    throw std::invalid_argument("trainer: grid size must be >= 1");
  }
  if (objectives::needs_safety(objective) &&
      !(gamma >= 0.0 && gamma <= 1.0)) {
    throw std::invalid_argument("trainer: gamma must lie in [0, 1]");
  }
  if (!(learning_rate > 0.0)) {
    throw std::invalid_argument("trainer: learning rate must be positive");
  }
  if (!(lr_decay >= 0.0 && lr_decay < 1.0)) {
    throw std::invalid_argument("trainer: lr decay must lie in [0, 1)");
  }
  if (decay_interval < 1) {
    throw std::invalid_argument("trainer: decay interval must be >= 1");
  }
  if (total_steps < 1 || epoch_length < 1 ||
      total_steps % epoch_length != 0) {
    throw std::invalid_argument(
        "trainer: total_steps must be a positive multiple of epoch_length");
  }
  if (heldout_tasks < 1 || heldout_points < 1) {
    throw std::invalid_argument("trainer: held-out sizes must be positive");
  }
  if (objective == objectives::Objective::kDad) {
    if (policy.has_budget_input) {
      throw std::invalid_argument(
          "trainer: contrastive training fixes the budget, so the policy "
          "must not take a budget input");
    }
    if (policy.has_safety_branch) {
      throw std::invalid_argument(
          "trainer: contrastive training has no safety branch");
    }
  }
}

Batch assemble_batch(Rng& rng, const TrainConfig& config) {
  const TaskSamplerOptions opt = config.sampler_options();
  const bool dad = config.objective == objectives::Objective::kDad;
  const int pairs = dad ? 1 : config.n_pairs;

  Batch batch;
  batch.instances.reserve(
      static_cast<std::size_t>(config.n_hyper) * pairs * config.n_noise);
  for (int k = 0; k < config.n_hyper; ++k) {
    const TaskHyperParams hp = sample_hyperparams(rng, opt);
    for (int j = 0; j < pairs; ++j) {
      const Task base = sample_task_functions(rng, hp, opt);
      const double sy = std::sqrt(base.hp.f_noise_var);
      const double sz =
          base.q ? std::sqrt(base.hp.q_noise_var) : 0.0;
      const int t_sim =
          config.policy.has_budget_input
              ? 1 + static_cast<int>(
                        rng.integer(static_cast<std::uint64_t>(config.horizon)))
              : config.horizon;
      for (int b = 0; b < config.n_noise; ++b) {
        Instance inst;
        inst.task = base;
        inst.t_sim = t_sim;
        inst.set = k;
        if (b > 0) {
          // Fresh observation noise at the pair's initial inputs.
          Dataset& init = inst.task.init;
          for (int i = 0; i < init.size(); ++i) {
            init.outputs[i] = eval_function(base.f, init.inputs.row(i).transpose()) +
                              rng.normal(0.0, sy);
          }
          if (base.q) {
            for (int i = 0; i < init.size(); ++i) {
              (*init.safety)[i] =
                  eval_function(*base.q, init.inputs.row(i).transpose()) +
                  rng.normal(0.0, sz);
            }
          }
        }
        inst.noise_y.resize(t_sim);
        inst.noise_z.resize(base.q ? t_sim : 0);
        for (int t = 0; t < t_sim; ++t) {
          inst.noise_y[t] = rng.normal(0.0, sy);
          if (base.q) inst.noise_z[t] = rng.normal(0.0, sz);
        }
        if (objectives::needs_grid(config.objective)) {
          inst.grid.inputs = sample_grid(rng, config.n_grid, config.dim);
          inst.grid.outputs.resize(config.n_grid);
          for (int i = 0; i < config.n_grid; ++i) {
            inst.grid.outputs[i] =
                eval_function(base.f, inst.grid.inputs.row(i).transpose()) +
                rng.normal(0.0, sy);
          }
        }
        batch.instances.push_back(std::move(inst));
      }
    }
    if (dad) {
      std::vector<FourierFunction> pool;
      pool.reserve(config.n_pairs);
      for (int l = 0; l < config.n_pairs; ++l) {
        pool.push_back(
            sample_fourier_function(rng, hp.f_kernel, config.n_features));
      }
      batch.contrastive.push_back(std::move(pool));
    }
  }
  return batch;
}

InstanceEval eval_instance(const PolicyParams& params,
                           const TrainConfig& config, const Batch& batch,
                           int index) {
  const Instance& inst = batch.instances[static_cast<std::size_t>(index)];
  const Task& task = inst.task;
  const bool constrained = task.q.has_value();
  const bool branch = config.policy.has_safety_branch;
  const int dim = config.dim;
  const int n0 = task.init.size();

  Tape t;
  const BoundPolicy bound = policy::bind_policy(t, params, /*trainable=*/true);

  Eigen::MatrixXd init_hist(n0, dim + 1);
  init_hist.leftCols(dim) = task.init.inputs;
  init_hist.col(dim) = task.init.outputs;
  std::vector<Var> hist_rows{t.constant(init_hist)};
  std::vector<Var> safe_rows;
  if (branch) {
    Eigen::MatrixXd init_safe(n0, dim + 1);
    init_safe.leftCols(dim) = task.init.inputs;
    init_safe.col(dim) = *task.init.safety;
    safe_rows.push_back(t.constant(init_safe));
  }

  std::vector<Var> xs, ys, zs;
  for (int step = 0; step < inst.t_sim; ++step) {
    const Var hist =
        hist_rows.size() == 1 ? hist_rows[0] : tape::concat_rows(t, hist_rows);
    std::optional<Var> shist;
    if (branch) {
      shist = safe_rows.size() == 1 ? safe_rows[0]
                                    : tape::concat_rows(t, safe_rows);
    }
    const double scaled =
        static_cast<double>(inst.t_sim - step) / config.horizon;
    const Var x = policy::policy_step(t, bound, hist, shist, scaled);
    const Var y = tape::add(
        t, tape::fourier_eval(t, x, task.f),
        t.constant(Eigen::MatrixXd::Constant(1, 1, inst.noise_y[step])));
    xs.push_back(x);
    ys.push_back(y);
    hist_rows.push_back(tape::concat_cols(t, {x, y}));
    if (constrained) {
      const Var z = tape::add(
          t, tape::fourier_eval(t, x, *task.q),
          t.constant(Eigen::MatrixXd::Constant(1, 1, inst.noise_z[step])));
      zs.push_back(z);
      if (branch) safe_rows.push_back(tape::concat_cols(t, {x, z}));
    }
  }

  objectives::TapeRollout rollout;
  rollout.queries = xs.size() == 1 ? xs[0] : tape::concat_rows(t, xs);
  rollout.outputs = ys.size() == 1 ? ys[0] : tape::concat_rows(t, ys);
  if (!zs.empty()) {
    rollout.safety_obs = zs.size() == 1 ? zs[0] : tape::concat_rows(t, zs);
  }

  objectives::ScoreContext ctx;
  ctx.task = &task;
  ctx.gamma = config.gamma;
  if (objectives::needs_grid(config.objective)) ctx.grid = &inst.grid;
  if (objectives::needs_contrastive(config.objective)) {
    ctx.contrastive = &batch.contrastive[static_cast<std::size_t>(inst.set)];
  }
  const Var score = objectives::score(t, config.objective, ctx, rollout);

  // The per-instance normalization ties directly to the assembled data.
  const int divisor = n0 + static_cast<int>(t.value(rollout.queries).rows());
  if (divisor != n0 + inst.t_sim) {
    throw std::logic_error("trainer: normalization divisor mismatch");
  }
  const Var loss =
      tape::scale(t, tape::neg(t, score), 1.0 / static_cast<double>(divisor));
  t.backward(loss);

  InstanceEval out;
  out.score = t.value(score)(0, 0);
  out.loss = t.value(loss)(0, 0);
  out.queries = t.value(rollout.queries);
  out.outputs = t.value(rollout.outputs).col(0);
  out.grads.reserve(bound.params.size());
  for (const Var p : bound.params) {
    out.grads.push_back(t.adjoint_or_zero(p));
  }

  if (config.objective == objectives::Objective::kDad &&
      std::isfinite(out.score)) {
    const double cap =
        std::log(static_cast<double>(ctx.contrastive->size()) + 1.0);
    if (out.score > cap + 1e-9) {
      throw std::logic_error("trainer: contrastive score exceeds its bound");
    }
  }
  return out;
}

StepResult train_step(PolicyParams& params, RAdam& opt, double lr, Rng& rng,
                      const TrainConfig& config) {
  const Batch batch = assemble_batch(rng, config);
  const int count = static_cast<int>(batch.instances.size());

  double loss_sum = 0.0;
  std::vector<Eigen::MatrixXd> grad_sum;
  grad_sum.reserve(params.tensors.size());
  for (const Eigen::MatrixXd& t : params.tensors) {
    grad_sum.push_back(Eigen::MatrixXd::Zero(t.rows(), t.cols()));
  }
  // Fixed reduction order over instances keeps the update deterministic.
  for (int i = 0; i < count; ++i) {
    const InstanceEval ev = eval_instance(params, config, batch, i);
    loss_sum += ev.loss;
    for (std::size_t p = 0; p < grad_sum.size(); ++p) {
      grad_sum[p] += ev.grads[p];
    }
  }

  StepResult result;
  result.loss = loss_sum / count;
  bool finite = std::isfinite(result.loss);
  for (const Eigen::MatrixXd& g : grad_sum) {
    if (!g.allFinite()) {
      finite = false;
      break;
    }
  }
  if (!finite) {
    result.skipped = true;
    return result;
  }
  for (Eigen::MatrixXd& g : grad_sum) g /= static_cast<double>(count);
  opt.step(params.tensors, grad_sum, lr);
  return result;
}

objectives::Rollout rollout_policy(const PolicyParams& params,
                                   const Task& task, int t_sim, int horizon,
                                   const Eigen::VectorXd& noise_y,
                                   const Eigen::VectorXd& noise_z) {
  if (t_sim < 1 || t_sim > horizon) {
    throw std::invalid_argument("trainer: t_sim must lie in [1, horizon]");
  }
  const bool constrained = task.q.has_value();
  if (noise_y.size() != t_sim ||
      (constrained && noise_z.size() != t_sim)) {
    throw std::invalid_argument("trainer: noise length mismatch");
  }

  Dataset history = task.init;
  objectives::Rollout r;
  r.task = &task;
  r.queries.resize(t_sim, task.init.dim());
  r.outputs.resize(t_sim);
  if (constrained) r.safety_obs.resize(t_sim);
  r.budget_trace.reserve(static_cast<std::size_t>(t_sim));

  for (int t = 0; t < t_sim; ++t) {
    const int remaining = t_sim - t;
    const Eigen::VectorXd x =
        policy::policy_query(params, remaining, horizon, history);
    const double y = eval_function(task.f, x) + noise_y[t];
    std::optional<double> z;
    if (constrained) z = eval_function(*task.q, x) + noise_z[t];
    r.queries.row(t) = x.transpose();
    r.outputs[t] = y;
    if (z) r.safety_obs[t] = *z;
    r.budget_trace.push_back(remaining);
    history.append(x, y, history.safety ? z : std::nullopt);
  }
  r.validate();
  return r;
}

objectives::Rollout rollout_policy(const PolicyParams& params,
                                   const Task& task, int t_sim, int horizon,
                                   Rng& rng) {
  if (t_sim < 1 || t_sim > horizon) {
    throw std::invalid_argument("trainer: t_sim must lie in [1, horizon]");
  }
  const bool constrained = task.q.has_value();
  Eigen::VectorXd noise_y(t_sim);
  Eigen::VectorXd noise_z(constrained ? t_sim : 0);
  const double sy = std::sqrt(task.hp.f_noise_var);
  const double sz = constrained ? std::sqrt(task.hp.q_noise_var) : 0.0;
  for (int t = 0; t < t_sim; ++t) {
    noise_y[t] = rng.normal(0.0, sy);
    if (constrained) noise_z[t] = rng.normal(0.0, sz);
  }
  return rollout_policy(params, task, t_sim, horizon, noise_y, noise_z);
}

double gp_test_rmse(const Task& task, const Eigen::MatrixXd& queries,
                    const Eigen::VectorXd& outputs, int n_points, Rng& rng) {
  const int n0 = task.init.size();
  const int t_sim = static_cast<int>(queries.rows());
  Eigen::MatrixXd X(n0 + t_sim, queries.cols());
  Eigen::VectorXd y(n0 + t_sim);
  X.topRows(n0) = task.init.inputs;
  X.bottomRows(t_sim) = queries;
  y.head(n0) = task.init.outputs;
  y.tail(t_sim) = outputs;

  Eigen::MatrixXd test(n_points, queries.cols());
  for (int i = 0; i < n_points; ++i) {
    for (int j = 0; j < test.cols(); ++j) test(i, j) = rng.uniform();
  }
  const gp::Marginals marg = gp::posterior_marginals(
      X, y, test, task.hp.f_kernel, task.hp.f_noise_var);
  double sq = 0.0;
  for (int i = 0; i < n_points; ++i) {
    const double err = marg.mean[i] - task.f(test.row(i).transpose());
    sq += err * err;
  }
  return std::sqrt(sq / n_points);
}

double heldout_rmse(const PolicyParams& params, const TrainConfig& config,
                    Rng& rng) {
  const TaskSamplerOptions opt = config.sampler_options();
  double acc = 0.0;
  for (int i = 0; i < config.heldout_tasks; ++i) {
    const Task task = sample_task(rng, opt);
    const objectives::Rollout r =
        rollout_policy(params, task, config.horizon, config.horizon, rng);
    acc += gp_test_rmse(task, r.queries, r.outputs, config.heldout_points,
                        rng);
  }
  return acc / config.heldout_tasks;
}

namespace {

void check_tensor_shapes(const std::vector<Eigen::MatrixXd>& have,
                         const std::vector<Eigen::MatrixXd>& want,
                         const char* what) {
  if (have.size() != want.size()) {
    throw std::invalid_argument(std::string("trainer: ") + what +
                                " layout mismatch");
  }
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (have[i].rows() != want[i].rows() || have[i].cols() != want[i].cols()) {
      throw std::invalid_argument(std::string("trainer: ") + what +
                                  " shape mismatch");
    }
  }
}

TrainResult run_train(const TrainConfig& config, std::ostream* stream,
                      const PolicyParams* warm_start,
                      const std::string& state_out,
                      const TrainState* resume) {
  config.validate();

  Rng rng(config.seed);
  PolicyParams params = policy::init_policy(config.policy, rng);
  if (warm_start != nullptr) {
    check_tensor_shapes(warm_start->tensors, params.tensors, "warm start");
    params.tensors = warm_start->tensors;
  }
  RAdam opt(params.tensors);
  Rng eval_rng(derive_seed(config.seed, 0x68656c64));  // monitoring stream

  const int epochs = config.total_steps / config.epoch_length;
  const int window_start = std::max(0, epochs - 10);

  std::vector<TrainState::Snapshot> snapshots;

  TrainResult result;
  int consecutive_skips = 0;
  int start_step = 0;
  double epoch_loss = 0.0;
  int epoch_counted = 0;

  if (resume != nullptr) {
    if (resume->next_step < 0 || resume->next_step > config.total_steps ||
        resume->next_step % config.epoch_length != 0) {
      throw std::invalid_argument(
          "trainer: resume state is not at an epoch boundary of this "
          "configuration");
    }
    check_tensor_shapes(resume->tensors, params.tensors, "resume state");
    params.tensors = resume->tensors;
    opt.restore(resume->opt_m, resume->opt_v, resume->opt_steps);
    rng.restore(resume->rng_state);
    eval_rng.restore(resume->eval_rng_state);
    snapshots = resume->snapshots;
    result.skipped_steps = resume->skipped_steps;
    consecutive_skips = resume->consecutive_skips;
    start_step = resume->next_step;
  }

  for (int step = start_step; step < config.total_steps; ++step) {
    const double lr = config.learning_rate *
                      std::pow(1.0 - config.lr_decay,
                               step / config.decay_interval);
    const StepResult sr = train_step(params, opt, lr, rng, config);
    result.log.steps.push_back({step, sr.loss, lr, sr.skipped});
    if (stream != nullptr) {
      *stream << "{\"kind\":\"step\",\"step\":" << step
              << ",\"loss\":" << format_double(sr.loss)
              << ",\"lr\":" << format_double(lr)
              << ",\"skipped\":" << (sr.skipped ? "true" : "false") << "}\n";
    }
    if (sr.skipped) {
      ++result.skipped_steps;
      if (++consecutive_skips >= 20) {
        throw std::runtime_error(
            "trainer: aborted after 20 consecutive non-finite losses");
      }
    } else {
      consecutive_skips = 0;
      epoch_loss += sr.loss;
      ++epoch_counted;
    }

    if ((step + 1) % config.epoch_length == 0) {
      const int epoch = (step + 1) / config.epoch_length - 1;
      const double mean_loss =
          epoch_counted > 0 ? epoch_loss / epoch_counted
                            : std::numeric_limits<double>::infinity();
      const double rmse = heldout_rmse(params, config, eval_rng);
      result.log.epochs.push_back({epoch, mean_loss, rmse});
      if (stream != nullptr) {
        *stream << "{\"kind\":\"epoch\",\"epoch\":" << epoch
                << ",\"mean_loss\":" << format_double(mean_loss)
                << ",\"gp_rmse\":" << format_double(rmse) << "}\n";
      }
      if (epoch >= window_start) {
        snapshots.push_back({epoch, mean_loss, params.tensors});
      }
      epoch_loss = 0.0;
      epoch_counted = 0;

      if (!state_out.empty()) {
        TrainState st;
        st.next_step = step + 1;
        st.tensors = params.tensors;
        st.opt_m = opt.moment1();
        st.opt_v = opt.moment2();
        st.opt_steps = opt.step_count();
        st.rng_state = rng.state();
        st.eval_rng_state = eval_rng.state();
        st.skipped_steps = result.skipped_steps;
        st.consecutive_skips = consecutive_skips;
        st.snapshots = snapshots;
        save_train_state(st, state_out);
      }
    }
  }

  // The checkpoint with the best mean training loss among the final epochs.
  std::size_t best = 0;
  for (std::size_t i = 1; i < snapshots.size(); ++i) {
    if (snapshots[i].mean_loss < snapshots[best].mean_loss) best = i;
  }
  result.policy.config = config.policy;
  result.policy.tensors = std::move(snapshots[best].tensors);
  result.selected_epoch = snapshots[best].epoch;
  return result;
}

}  // namespace

TrainResult train(const TrainConfig& config, std::ostream* stream,
                  const PolicyParams* warm_start) {
  return run_train(config, stream, warm_start, std::string(), nullptr);
}

TrainResult train_dad(const TrainConfig& config, std::ostream* stream) {
  if (config.objective != objectives::Objective::kDad) {
    throw std::invalid_argument(
        "trainer: train_dad requires the contrastive objective");
  }
  return train(config, stream);
}

TrainResult train_resumable(const TrainConfig& config,
                            const std::string& state_out,
                            const TrainState* resume, std::ostream* stream) {
  return run_train(config, stream, nullptr, state_out, resume);
}

namespace {

constexpr std::uint32_t kStateMagic = 0x41534c54;  // "TLSA" little-endian
constexpr std::uint32_t kStateVersion = 1;

void write_tensor_list(std::ostream& os,
                       const std::vector<Eigen::MatrixXd>& tensors) {
  serialize::write_u32(os, static_cast<std::uint32_t>(tensors.size()));
  for (const Eigen::MatrixXd& t : tensors) serialize::write_matrix(os, t);
}

std::vector<Eigen::MatrixXd> read_tensor_list(std::istream& is) {
  std::vector<Eigen::MatrixXd> out(serialize::read_u32(is));
  for (Eigen::MatrixXd& t : out) t = serialize::read_matrix(is);
  return out;
}

}  // namespace

void save_train_state(const TrainState& state, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) {
      throw std::runtime_error("trainer: cannot write '" + tmp + "'");
    }
    serialize::write_u32(os, kStateMagic);
    serialize::write_u32(os, kStateVersion);
    serialize::write_u64(os, static_cast<std::uint64_t>(state.next_step));
    serialize::write_u64(os, static_cast<std::uint64_t>(state.opt_steps));
    serialize::write_u32(os, static_cast<std::uint32_t>(state.skipped_steps));
    serialize::write_u32(os,
                         static_cast<std::uint32_t>(state.consecutive_skips));
    write_tensor_list(os, state.tensors);
    write_tensor_list(os, state.opt_m);
    write_tensor_list(os, state.opt_v);
    serialize::write_string(os, state.rng_state);
    serialize::write_string(os, state.eval_rng_state);
    serialize::write_u32(os, static_cast<std::uint32_t>(state.snapshots.size()));
    for (const TrainState::Snapshot& s : state.snapshots) {
      serialize::write_u32(os, static_cast<std::uint32_t>(s.epoch));
      serialize::write_f64(os, s.mean_loss);
      write_tensor_list(os, s.tensors);
    }
    os.flush();
    if (!os) {
      throw std::runtime_error("trainer: short write to '" + tmp + "'");
    }
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw std::runtime_error("trainer: cannot move state into '" + path +
                             "'");
  }
}

TrainState load_train_state(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw std::runtime_error("trainer: cannot read '" + path + "'");
  }
  if (serialize::read_u32(is) != kStateMagic ||
      serialize::read_u32(is) != kStateVersion) {
    throw std::runtime_error("trainer: '" + path +
                             "' is not a training state file");
  }
  TrainState st;
  st.next_step = static_cast<int>(serialize::read_u64(is));
  st.opt_steps = static_cast<std::int64_t>(serialize::read_u64(is));
  st.skipped_steps = static_cast<int>(serialize::read_u32(is));
  st.consecutive_skips = static_cast<int>(serialize::read_u32(is));
  st.tensors = read_tensor_list(is);
  st.opt_m = read_tensor_list(is);
  st.opt_v = read_tensor_list(is);
  st.rng_state = serialize::read_string(is);
  st.eval_rng_state = serialize::read_string(is);
  st.snapshots.resize(serialize::read_u32(is));
  for (TrainState::Snapshot& s : st.snapshots) {
    s.epoch = static_cast<int>(serialize::read_u32(is));
    s.mean_loss = serialize::read_f64(is);
    s.tensors = read_tensor_list(is);
  }
  serialize::check_stream(is, "training state");
  return st;
}

}  // namespace asal::trainer
