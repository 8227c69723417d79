#include "asal/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace asal::objectives {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kProbFloor = 1e-5;

const Task& checked_task(const Rollout& r) {
  if (r.task == nullptr) throw std::invalid_argument("rollout: no task");
  return *r.task;
}

const Task& constrained_task(const Rollout& r) {
  const Task& task = checked_task(r);
  if (!task.q || !task.hp.q_kernel || !task.hp.q_mean ||
      !task.init.safety || r.safety_obs.size() != r.t_sim()) {
    throw std::invalid_argument(
        "objectives: safety scoring needs a constrained task with safety "
        "observations");
  }
  return task;
}

void check_gamma(double gamma) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) {
    throw std::invalid_argument("objectives: gamma must lie in [0, 1]");
  }
}

gp::MeanFn sech_mean_fn(const SechMeanParams& mean) {
  return [&mean](const Eigen::VectorXd& x) { return mean(x); };
}

double floored_log(double p, double floor) {
  return std::log(std::max(p, floor));
}

// Conditioning data stacked as [task init; extra grid].
void stack_conditioning(const Dataset& init, const Dataset* grid,
                        Eigen::MatrixXd& X, Eigen::VectorXd& y) {
  const int n0 = init.size();
  const int ng = grid ? grid->size() : 0;
  X.resize(n0 + ng, init.inputs.cols() > 0 ? init.inputs.cols()
                                           : (grid ? grid->dim() : 0));
  y.resize(n0 + ng);
  if (n0 > 0) {
    X.topRows(n0) = init.inputs;
    y.head(n0) = init.outputs;
  }
  if (ng > 0) {
    X.bottomRows(ng) = grid->inputs;
    y.tail(ng) = grid->outputs;
  }
}

double nll_given(const Rollout& r, const Eigen::MatrixXd& Xc,
                 const Eigen::VectorXd& yc) {
  const Task& task = checked_task(r);
  const auto pred = gp::posterior(Xc, yc, r.queries, task.hp.f_kernel,
                                  task.hp.f_noise_var);
  return -gp::log_pdf(r.outputs, pred);
}

double entropy_given(const Rollout& r, const Eigen::MatrixXd& Xc,
                     const Eigen::VectorXd& yc) {
  const Task& task = checked_task(r);
  const auto pred = gp::posterior(Xc, yc, r.queries, task.hp.f_kernel,
                                  task.hp.f_noise_var);
  return gp::entropy(pred);
}

}  // namespace

void Rollout::validate() const {
  if (task == nullptr) throw std::invalid_argument("rollout: no task");
  const int t = t_sim();
  if (t < 1) throw std::invalid_argument("rollout: empty query sequence");
  if (outputs.size() != t) {
    throw std::invalid_argument("rollout: outputs/queries length mismatch");
  }
  if (safety_obs.size() != 0 && safety_obs.size() != t) {
    throw std::invalid_argument("rollout: safety/queries length mismatch");
  }
  if (!budget_trace.empty() && static_cast<int>(budget_trace.size()) != t) {
    throw std::invalid_argument("rollout: budget trace length mismatch");
  }
  if (queries.minCoeff() < 0.0 || queries.maxCoeff() > 1.0) {
    throw std::invalid_argument("rollout: query outside the unit hypercube");
  }
}

const char* objective_name(Objective o) {
  switch (o) {
    case Objective::kEntropy: return "entropy";
    case Objective::kEntropyMean: return "entropy-mean";
    case Objective::kMutualInfo: return "mutual-info";
    case Objective::kMutualInfoMean: return "mutual-info-mean";
    case Objective::kSafeEntropy: return "safe-entropy";
    case Objective::kSafeDivision: return "safe-entropy-division";
    case Objective::kDad: return "dad";
  }
  throw std::invalid_argument("objectives: unknown objective");
}

Objective parse_objective(const std::string& name) {
  const Objective all[] = {
      Objective::kEntropy,     Objective::kEntropyMean,
      Objective::kMutualInfo,  Objective::kMutualInfoMean,
      Objective::kSafeEntropy, Objective::kSafeDivision,
      Objective::kDad};
  for (const Objective o : all) {
    if (name == objective_name(o)) return o;
  }
  throw std::invalid_argument("objectives: unknown objective " + name);
}

bool needs_grid(Objective o) {
  return o == Objective::kMutualInfo || o == Objective::kMutualInfoMean;
}
bool needs_safety(Objective o) {
  return o == Objective::kSafeEntropy || o == Objective::kSafeDivision;
}
bool needs_contrastive(Objective o) { return o == Objective::kDad; }

double entropy_score(const Rollout& r) {
  const Task& task = checked_task(r);
  return nll_given(r, task.init.inputs, task.init.outputs);
}

double mean_entropy_score(const Rollout& r) {
  const Task& task = checked_task(r);
  return entropy_given(r, task.init.inputs, task.init.outputs);
}

double mutual_info_score(const Rollout& r, const Dataset& grid) {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  stack_conditioning(checked_task(r).init, &grid, X, y);
  return entropy_score(r) - nll_given(r, X, y);
}

double mean_mi_score(const Rollout& r, const Dataset& grid) {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  stack_conditioning(checked_task(r).init, &grid, X, y);
  return mean_entropy_score(r) - entropy_given(r, X, y);
}

Eigen::VectorXd unsafe_logprob_terms(const Rollout& r, double gamma) {
  check_gamma(gamma);
  const Task& task = constrained_task(r);
  const double floor = std::max(gamma, kProbFloor);
  const gp::MeanFn mean = sech_mean_fn(*task.hp.q_mean);
  const int n0 = task.init.size();
  const int dim = static_cast<int>(r.queries.cols());
  Eigen::VectorXd terms(r.t_sim());
  for (int t = 0; t < r.t_sim(); ++t) {
    Eigen::MatrixXd Xc(n0 + t, dim);
    Eigen::VectorXd zc(n0 + t);
    if (n0 > 0) {
      Xc.topRows(n0) = task.init.inputs;
      zc.head(n0) = *task.init.safety;
    }
    if (t > 0) {
      Xc.bottomRows(t) = r.queries.topRows(t);
      zc.tail(t) = r.safety_obs.head(t);
    }
    const auto marg =
        gp::posterior_marginals(Xc, zc, r.queries.row(t), *task.hp.q_kernel,
                                task.hp.q_noise_var, mean);
    const double p_unsafe = gp::safety_prob_neg(marg.mean[0], marg.var[0]);
    terms[t] = floored_log(p_unsafe, floor);
  }
  return terms;
}

double safe_score(const Rollout& r, double gamma) {
  return entropy_score(r) - unsafe_logprob_terms(r, gamma).sum();
}

double safe_division_score(const Rollout& r) {
  const Task& task = constrained_task(r);
  const gp::MeanFn mean = sech_mean_fn(*task.hp.q_mean);
  const int n0 = task.init.size();
  const int dim = static_cast<int>(r.queries.cols());
  double penalty = 0.0;
  for (int t = 0; t < r.t_sim(); ++t) {
    Eigen::MatrixXd Xc(n0 + t, dim);
    Eigen::VectorXd zc(n0 + t);
    if (n0 > 0) {
      Xc.topRows(n0) = task.init.inputs;
      zc.head(n0) = *task.init.safety;
    }
    if (t > 0) {
      Xc.bottomRows(t) = r.queries.topRows(t);
      zc.tail(t) = r.safety_obs.head(t);
    }
    const auto marg =
        gp::posterior_marginals(Xc, zc, r.queries.row(t), *task.hp.q_kernel,
                                task.hp.q_noise_var, mean);
    const double p_safe = gp::safety_prob_nonneg(marg.mean[0], marg.var[0]);
    penalty += floored_log(p_safe, kProbFloor);
  }
  return entropy_score(r) + penalty;
}

double dad_score(const Rollout& r,
                 const std::vector<FourierFunction>& contrastive) {
  const Task& task = checked_task(r);
  const double noise = task.hp.f_noise_var;
  const int n0 = task.init.size();
  const int n = n0 + r.t_sim();
  Eigen::MatrixXd X(n, r.queries.cols());
  Eigen::VectorXd y(n);
  if (n0 > 0) {
    X.topRows(n0) = task.init.inputs;
    y.head(n0) = task.init.outputs;
  }
  X.bottomRows(r.t_sim()) = r.queries;
  y.tail(r.t_sim()) = r.outputs;

  const auto log_likelihood = [&](const FourierFunction& f) {
    const Eigen::VectorXd pred = f.eval_rows(X);
    return -0.5 * n * std::log(2.0 * std::numbers::pi * noise) -
           (y - pred).squaredNorm() / (2.0 * noise);
  };
  std::vector<double> lps;
  lps.reserve(contrastive.size() + 1);
  lps.push_back(log_likelihood(task.f));
  for (const FourierFunction& f : contrastive) {
    lps.push_back(log_likelihood(f));
  }
  const double mx = *std::max_element(lps.begin(), lps.end());
  double acc = 0.0;
  for (const double lp : lps) acc += std::exp(lp - mx);
  return lps[0] - (mx + std::log(acc)) +
         std::log(static_cast<double>(lps.size()));
}

Eigen::VectorXd minunsafe_scores(const gp::Marginals& f_pred,
                                 const gp::Marginals& q_pred, double gamma) {
  check_gamma(gamma);
  if (f_pred.mean.size() != q_pred.mean.size()) {
    throw std::invalid_argument("minunsafe: marginal size mismatch");
  }
  const double floor = std::max(gamma, kProbFloor);
  Eigen::VectorXd scores(f_pred.mean.size());
  for (int i = 0; i < scores.size(); ++i) {
    const double entropy =
        0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e *
                       f_pred.var[i]);
    const double p_unsafe =
        gp::safety_prob_neg(q_pred.mean[i], q_pred.var[i]);
    scores[i] = entropy - floored_log(p_unsafe, floor);
  }
  return scores;
}

double minunsafe_acquisition(const Eigen::VectorXd& x, const Dataset& history,
                             double gamma, const KernelParams& f_kernel,
                             double f_noise_var, const KernelParams& q_kernel,
                             double q_noise_var) {
  if (!history.safety) {
    throw std::invalid_argument("minunsafe: history lacks safety values");
  }
  const auto fm = gp::posterior_marginals(history.inputs, history.outputs,
                                          x.transpose(), f_kernel,
                                          f_noise_var);
  const auto qm = gp::posterior_marginals(history.inputs, *history.safety,
                                          x.transpose(), q_kernel,
                                          q_noise_var);
  return minunsafe_scores(fm, qm, gamma)[0];
}

// --- Differentiable path -----------------------------------------------------

namespace {

using tape::Tape;
using tape::Var;

// Conditional predictive of the rollout outputs at tape queries, given
// constant conditioning data under a zero-mean GP. The constant system is
// factored off-tape once; only the cross-covariances differentiate.
struct TapeConditional {
  Var cov;                    // T x T, noise-inclusive
  std::optional<Var> mean;    // T x 1; absent when unconditioned (zero mean)
};

TapeConditional conditional_predictive(Tape& t, const KernelParams& kernel,
                                       double noise_var,
                                       const Eigen::MatrixXd& Xc,
                                       const Eigen::VectorXd& yc,
                                       Var queries) {
  TapeConditional out;
  Var gram = tape::rbf_gram(t, queries, kernel);
  if (Xc.rows() > 0) {
    Eigen::MatrixXd sys = rbf_gram_matrix(kernel, Xc);
    sys.diagonal().array() += noise_var;
    const gp::CholResult chol = gp::jittered_cholesky(sys);
    const Eigen::VectorXd alpha = chol.L.transpose()
                                      .triangularView<Eigen::Upper>()
                                      .solve(chol.L.triangularView<Eigen::Lower>()
                                                 .solve(yc));
    const Var cross =
        tape::rbf_cross(t, queries, t.constant(Xc), kernel);  // T x n0
    const Var half =
        tape::trisolve_lower_const(t, chol.L, tape::transpose(t, cross));
    out.mean = tape::matmul(t, cross, t.constant(alpha));
    gram = tape::sub(t, gram,
                     tape::matmul(t, tape::transpose(t, half), half));
  }
  out.cov = tape::add_scaled_identity(t, gram, noise_var);
  return out;
}

Var conditional_nll(Tape& t, const KernelParams& kernel, double noise_var,
                    const Eigen::MatrixXd& Xc, const Eigen::VectorXd& yc,
                    Var queries, Var outputs) {
  const TapeConditional pred =
      conditional_predictive(t, kernel, noise_var, Xc, yc, queries);
  const Var resid =
      pred.mean ? tape::sub(t, outputs, *pred.mean) : outputs;
  const Var logdet = tape::logdet_spd(t, pred.cov);
  const Var sol = tape::solve_spd(t, pred.cov, resid);
  const Var quad = tape::matmul(t, tape::transpose(t, resid), sol);
  const double m = static_cast<double>(t.value(outputs).rows());
  return tape::add_const(t, tape::scale(t, tape::add(t, logdet, quad), 0.5),
                         0.5 * m * kLog2Pi);
}

Var conditional_entropy(Tape& t, const KernelParams& kernel, double noise_var,
                        const Eigen::MatrixXd& Xc, const Eigen::VectorXd& yc,
                        Var queries) {
  const TapeConditional pred =
      conditional_predictive(t, kernel, noise_var, Xc, yc, queries);
  const double m = static_cast<double>(t.value(queries).rows());
  return tape::add_const(t, tape::scale(t, tape::logdet_spd(t, pred.cov), 0.5),
                         0.5 * m * (kLog2Pi + 1.0));
}

// Sum over steps of the floored log safety penalty. `division` switches the
// probability from p(z < 0) clamped at max(gamma, 1e-5) to p(z >= 0)
// clamped at 1e-5 only.
Var safety_penalty_sum(Tape& t, const Task& task, Var queries, Var safety_obs,
                       double gamma, bool division) {
  const KernelParams& kernel = *task.hp.q_kernel;
  const double noise_var = task.hp.q_noise_var;
  const SechMeanParams& mean = *task.hp.q_mean;
  const double floor = division ? kProbFloor : std::max(gamma, kProbFloor);
  const int steps = static_cast<int>(t.value(queries).rows());
  const int dim = static_cast<int>(t.value(queries).cols());
  const int n0 = task.init.size();

  std::optional<Var> init_inputs;
  std::optional<Var> init_resid;
  if (n0 > 0) {
    Eigen::VectorXd prior(n0);
    for (int i = 0; i < n0; ++i) {
      prior[i] = mean(task.init.inputs.row(i).transpose());
    }
    init_inputs = t.constant(task.init.inputs);
    init_resid = t.constant(*task.init.safety - prior);
  }
  const Var prior_var =
      t.constant(Eigen::MatrixXd::Constant(1, 1, kernel.variance + noise_var));

  std::vector<Var> terms;
  terms.reserve(steps);
  for (int step = 0; step < steps; ++step) {
    const Var xs = tape::block(t, queries, step, 0, 1, dim);
    const Var prior_mean = tape::sech_mean_eval(t, xs, mean);
    const int nc = n0 + step;
    Var m_z{-1};
    Var v_z{-1};
    if (nc == 0) {
      m_z = prior_mean;
      v_z = prior_var;
    } else {
      std::vector<Var> input_parts;
      std::vector<Var> resid_parts;
      if (init_inputs) {
        input_parts.push_back(*init_inputs);
        resid_parts.push_back(*init_resid);
      }
      if (step > 0) {
        const Var prefix = tape::block(t, queries, 0, 0, step, dim);
        input_parts.push_back(prefix);
        resid_parts.push_back(
            tape::sub(t, tape::block(t, safety_obs, 0, 0, step, 1),
                      tape::sech_mean_eval(t, prefix, mean)));
      }
      const Var cond = input_parts.size() == 1 ? input_parts[0]
                                               : tape::concat_rows(t, input_parts);
      const Var resid = resid_parts.size() == 1
                            ? resid_parts[0]
                            : tape::concat_rows(t, resid_parts);
      const Var sys = tape::add_scaled_identity(
          t, tape::rbf_gram(t, cond, kernel), noise_var);
      const Var ks =
          tape::transpose(t, tape::rbf_cross(t, xs, cond, kernel));  // nc x 1
      const Var sol =
          tape::solve_spd(t, sys, tape::concat_cols(t, {ks, resid}));
      const Var kst = tape::transpose(t, ks);
      m_z = tape::add(t, prior_mean,
                      tape::matmul(t, kst, tape::block(t, sol, 0, 1, nc, 1)));
      v_z = tape::sub(t, prior_var,
                      tape::matmul(t, kst, tape::block(t, sol, 0, 0, nc, 1)));
    }
    const Var u = tape::cdiv(t, m_z, tape::sqrt_(t, tape::scale(t, v_z, 2.0)));
    const Var erf = tape::erf_(t, u);
    const Var p = division
                      ? tape::scale(t, tape::add_const(t, erf, 1.0), 0.5)
                      : tape::scale(t, tape::add_const(t, tape::neg(t, erf), 1.0),
                                    0.5);
    terms.push_back(tape::log_(t, tape::cwise_max_const(t, p, floor)));
  }
  return terms.size() == 1 ? terms[0]
                           : tape::sum_all(t, tape::concat_rows(t, terms));
}

Var dad_score_tape(Tape& t, const Task& task,
                   const std::vector<FourierFunction>& contrastive,
                   Var queries, Var outputs) {
  const double noise = task.hp.f_noise_var;
  const int n0 = task.init.size();
  const int steps = static_cast<int>(t.value(queries).rows());
  const int n = n0 + steps;
  const double shared = -0.5 * n * std::log(2.0 * std::numbers::pi * noise);

  const auto log_likelihood = [&](const FourierFunction& f) {
    double init_ssq = 0.0;
    for (int i = 0; i < n0; ++i) {
      const double d =
          task.init.outputs[i] - f(task.init.inputs.row(i).transpose());
      init_ssq += d * d;
    }
    const Var resid =
        tape::sub(t, outputs, tape::fourier_eval(t, queries, f));
    const Var ssq = tape::matmul(t, tape::transpose(t, resid), resid);
    return tape::add_const(t, tape::scale(t, ssq, -0.5 / noise),
                           shared - init_ssq / (2.0 * noise));
  };

  std::vector<Var> lps;
  lps.reserve(contrastive.size() + 1);
  lps.push_back(log_likelihood(task.f));
  for (const FourierFunction& f : contrastive) {
    lps.push_back(log_likelihood(f));
  }
  const Var stacked = lps.size() == 1 ? lps[0] : tape::concat_rows(t, lps);
  const Var lse = tape::logsumexp_all(t, stacked);
  return tape::add_const(t, tape::sub(t, lps[0], lse),
                         std::log(static_cast<double>(lps.size())));
}

}  // namespace

Var score(Tape& t, Objective o, const ScoreContext& ctx,
          const TapeRollout& r) {
  if (ctx.task == nullptr) {
    throw std::invalid_argument("objectives: score needs a task");
  }
  const Task& task = *ctx.task;
  const int steps = static_cast<int>(t.value(r.queries).rows());
  if (steps < 1) throw std::invalid_argument("objectives: empty rollout");
  if (t.value(r.outputs).rows() != steps || t.value(r.outputs).cols() != 1) {
    throw std::invalid_argument("objectives: outputs must be T x 1");
  }
  const KernelParams& fk = task.hp.f_kernel;
  const double fn = task.hp.f_noise_var;

  switch (o) {
    case Objective::kEntropy:
      return conditional_nll(t, fk, fn, task.init.inputs, task.init.outputs,
                             r.queries, r.outputs);
    case Objective::kEntropyMean:
      return conditional_entropy(t, fk, fn, task.init.inputs,
                                 task.init.outputs, r.queries);
    case Objective::kMutualInfo:
    case Objective::kMutualInfoMean: {
      if (ctx.grid == nullptr) {
        throw std::invalid_argument("objectives: grid required");
      }
      Eigen::MatrixXd X;
      Eigen::VectorXd y;
      stack_conditioning(task.init, ctx.grid, X, y);
      if (o == Objective::kMutualInfo) {
        const Var base = conditional_nll(t, fk, fn, task.init.inputs,
                                         task.init.outputs, r.queries,
                                         r.outputs);
        return tape::sub(t, base,
                         conditional_nll(t, fk, fn, X, y, r.queries,
                                         r.outputs));
      }
      const Var base = conditional_entropy(t, fk, fn, task.init.inputs,
                                           task.init.outputs, r.queries);
      return tape::sub(t, base,
                       conditional_entropy(t, fk, fn, X, y, r.queries));
    }
    case Objective::kSafeEntropy:
    case Objective::kSafeDivision: {
      check_gamma(ctx.gamma);
      if (!task.q || !task.hp.q_kernel || !task.hp.q_mean ||
          !task.init.safety || !r.safety_obs) {
        throw std::invalid_argument(
            "objectives: safety scoring needs a constrained task with safety "
            "observations");
      }
      const Var base = conditional_nll(t, fk, fn, task.init.inputs,
                                       task.init.outputs, r.queries,
                                       r.outputs);
      const bool division = o == Objective::kSafeDivision;
      const Var penalty = safety_penalty_sum(t, task, r.queries,
                                             *r.safety_obs, ctx.gamma,
                                             division);
      return division ? tape::add(t, base, penalty)
                      : tape::sub(t, base, penalty);
    }
    case Objective::kDad:
      if (ctx.contrastive == nullptr) {
        throw std::invalid_argument("objectives: contrastive set required");
      }
      return dad_score_tape(t, task, *ctx.contrastive, r.queries, r.outputs);
  }
  throw std::invalid_argument("objectives: unknown objective");
}

GradCheckReport gradcheck_all(std::uint64_t seed, double tol, bool sabotage) {
  Rng rng(seed);
  TaskSamplerOptions plain_opt;
  plain_opt.dim = 1;
  plain_opt.constrained = false;
  plain_opt.n_init = 2;
  plain_opt.n_features = 30;
  TaskSamplerOptions safe_opt = plain_opt;
  safe_opt.constrained = true;
  const Task plain = sample_task(rng, plain_opt);
  const Task safe = sample_task(rng, safe_opt);

  const int steps = 3;
  Dataset grid;
  grid.inputs = sample_grid(rng, 6, 1);
  grid.outputs.resize(6);
  for (int i = 0; i < 6; ++i) {
    grid.outputs[i] = plain.f(grid.inputs.row(i).transpose()) +
                      rng.normal(0.0, std::sqrt(plain.hp.f_noise_var));
  }
  std::vector<FourierFunction> contrastive;
  for (int l = 0; l < 3; ++l) {
    contrastive.push_back(
        sample_fourier_function(rng, plain.hp.f_kernel, 30));
  }
  Eigen::MatrixXd queries(steps, 1);
  Eigen::VectorXd noise_y(steps);
  Eigen::VectorXd noise_z(steps);
  for (int i = 0; i < steps; ++i) {
    queries(i, 0) = rng.uniform(0.15, 0.85);
    noise_y[i] = rng.normal(0.0, std::sqrt(plain.hp.f_noise_var));
    noise_z[i] = rng.normal(0.0, std::sqrt(safe.hp.q_noise_var));
  }

  const Objective all[] = {
      Objective::kEntropy,     Objective::kEntropyMean,
      Objective::kMutualInfo,  Objective::kMutualInfoMean,
      Objective::kSafeEntropy, Objective::kSafeDivision,
      Objective::kDad};

  GradCheckReport report;
  for (const Objective o : all) {
    const Task& task = needs_safety(o) ? safe : plain;
    // Objective observation noise is resampled per task branch but fixed
    // across finite-difference evaluations.
    const auto eval = [&](const Eigen::MatrixXd& q,
                          Eigen::MatrixXd* grad) {
      Tape t;
      const Var qv = grad ? t.input(q) : t.constant(q);
      TapeRollout r;
      r.queries = qv;
      r.outputs = tape::add(t, tape::fourier_eval(t, qv, task.f),
                            t.constant(noise_y));
      if (task.q) {
        r.safety_obs = tape::add(t, tape::fourier_eval(t, qv, *task.q),
                                 t.constant(noise_z));
      }
      ScoreContext ctx;
      ctx.task = &task;
      ctx.grid = &grid;
      ctx.contrastive = &contrastive;
      ctx.gamma = 0.05;
      const Var s = score(t, o, ctx, r);
      if (grad) {
        t.backward(s);
        *grad = t.adjoint_or_zero(qv);
      }
      return t.value(s)(0, 0);
    };

    Eigen::MatrixXd grad;
    eval(queries, &grad);
    if (sabotage && o == Objective::kEntropy) {
      int bi = 0, bj = 0;
      grad.cwiseAbs().maxCoeff(&bi, &bj);
      grad(bi, bj) = -grad(bi, bj);
    }
    GradCheckEntry entry;
    entry.objective = objective_name(o);
    Eigen::MatrixXd probe = queries;
    for (int i = 0; i < probe.rows(); ++i) {
      for (int j = 0; j < probe.cols(); ++j) {
        const double x0 = probe(i, j);
        const double h = 1e-5;
        probe(i, j) = x0 + h;
        const double up = eval(probe, nullptr);
        probe(i, j) = x0 - h;
        const double dn = eval(probe, nullptr);
        probe(i, j) = x0;
        const double fd = (up - dn) / (2.0 * h);
        const double ad = grad(i, j);
        const double rel =
            std::abs(fd - ad) / std::max({1.0, std::abs(fd), std::abs(ad)});
        entry.max_rel_err = std::max(entry.max_rel_err, rel);
      }
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.entries.push_back(std::move(entry));
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

}  // namespace asal::objectives
