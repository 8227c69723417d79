#include "asal/task_sampler.hpp"

#include <Eigen/QR>
#include <stdexcept>

namespace asal {

namespace {

// Lengthscales follow 0.2 + Exp(rate 10) per dimension.
Eigen::VectorXd sample_lengthscales(Rng& rng, int dim) {
  Eigen::VectorXd ls(dim);
  for (int d = 0; d < dim; ++d) ls[d] = 0.2 + rng.exponential(10.0);
  return ls;
}

}  // namespace

TaskHyperParams sample_hyperparams(Rng& rng, const TaskSamplerOptions& opt) {
  if (opt.dim < 1) throw std::invalid_argument("sampler: dim must be >= 1");
  TaskHyperParams hp;
  hp.f_kernel.variance = rng.uniform(0.9616, 1.0);
  hp.f_kernel.lengthscales = sample_lengthscales(rng, opt.dim);
  hp.f_noise_var = 1.0001 - hp.f_kernel.variance;
  if (!opt.constrained) return hp;

  const double c2 = opt.c * opt.c;
  KernelParams qk;
  qk.variance = rng.uniform(0.9616 - c2, 1.0 - c2);
  qk.lengthscales = sample_lengthscales(rng, opt.dim);
  hp.q_noise_var = 1.0001 - c2 - qk.variance;
  hp.q_kernel = qk;

  SechMeanParams mean;
  mean.c = opt.c;
  mean.w.resize(opt.dim);
  for (int d = 0; d < opt.dim; ++d) mean.w[d] = rng.uniform(5.0, 40.0);
  Eigen::MatrixXd M(opt.dim, opt.dim);
  for (int i = 0; i < opt.dim; ++i) {
    for (int j = 0; j < opt.dim; ++j) M(i, j) = rng.uniform(-1.0, 1.0);
  }
  mean.Q = Eigen::HouseholderQR<Eigen::MatrixXd>(M).householderQ();
  hp.q_mean = std::move(mean);
  return hp;
}

SafeInitialResult sample_safe_initial(Rng& rng, const FourierFunction& f,
                                      const FourierFunction& q,
                                      double f_noise_var, double q_noise_var,
                                      int n_init, double region_lo,
                                      double region_hi, int max_draws) {
  const int dim = f.dim();
  const double f_std = std::sqrt(f_noise_var);
  const double q_std = std::sqrt(q_noise_var);

  SafeInitialResult out;
  out.data.inputs.resize(0, dim);
  out.data.outputs.resize(0);
  out.data.safety = Eigen::VectorXd(0);

  Eigen::MatrixXd batch_x(n_init, dim);
  Eigen::VectorXd batch_y(n_init), batch_z(n_init);
  for (int attempt = 0; attempt < max_draws; ++attempt) {
    for (int i = 0; i < n_init; ++i) {
      for (int d = 0; d < dim; ++d) {
        batch_x(i, d) = rng.uniform(region_lo, region_hi);
      }
    }
    for (int i = 0; i < n_init; ++i) {
      batch_y[i] = f(batch_x.row(i)) + rng.normal(0.0, f_std);
    }
    for (int i = 0; i < n_init; ++i) {
      batch_z[i] = q(batch_x.row(i)) + rng.normal(0.0, q_std);
    }
    for (int i = 0; i < n_init && out.data.size() < n_init; ++i) {
      if (batch_z[i] >= 0.0) {
        out.data.append(batch_x.row(i), batch_y[i], batch_z[i]);
      }
    }
    if (out.data.size() >= n_init) return out;
  }

  // Retry cap reached: accept the final draw wholesale.
  out.fallback = true;
  out.data.inputs = batch_x;
  out.data.outputs = batch_y;
  out.data.safety = batch_z;
  return out;
}

Task sample_task_functions(Rng& rng, const TaskHyperParams& hp,
                           const TaskSamplerOptions& opt) {
  Task task;
  task.hp = hp;
  task.f = sample_fourier_function(rng, hp.f_kernel, opt.n_features);
  if (opt.constrained) {
    if (!hp.q_kernel || !hp.q_mean) {
      throw std::invalid_argument("sampler: constrained task needs q hypers");
    }
    task.q =
        sample_fourier_function(rng, *hp.q_kernel, opt.n_features, hp.q_mean);
  }

  if (opt.constrained && opt.n_init > 0) {
    SafeInitialResult init = sample_safe_initial(
        rng, task.f, *task.q, hp.f_noise_var, hp.q_noise_var, opt.n_init,
        opt.safe_region_lo, opt.safe_region_hi, opt.max_initial_draws);
    task.init = std::move(init.data);
    task.init_fallback = init.fallback;
  } else {
    task.init.inputs.resize(opt.n_init, opt.dim);
    task.init.outputs.resize(opt.n_init);
    if (opt.constrained) task.init.safety = Eigen::VectorXd(opt.n_init);
    const double f_std = std::sqrt(hp.f_noise_var);
    for (int i = 0; i < opt.n_init; ++i) {
      for (int d = 0; d < opt.dim; ++d) {
        task.init.inputs(i, d) = rng.uniform(0.0, 1.0);
      }
    }
    for (int i = 0; i < opt.n_init; ++i) {
      task.init.outputs[i] =
          task.f(task.init.inputs.row(i)) + rng.normal(0.0, f_std);
    }
  }
  task.init.validate();
  return task;
}

Task sample_task(Rng& rng, const TaskSamplerOptions& opt) {
  const TaskHyperParams hp = sample_hyperparams(rng, opt);
  return sample_task_functions(rng, hp, opt);
}

Eigen::MatrixXd sample_grid(Rng& rng, int n, int dim) {
  Eigen::MatrixXd X(n, dim);
  for (int i = 0; i < n; ++i) {
    for (int d = 0; d < dim; ++d) X(i, d) = rng.beta_half_half();
  }
  return X;
}

}  // namespace asal
