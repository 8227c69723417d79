#include "asal/gp.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "asal/rng.hpp"

namespace asal::gp {

namespace {

std::atomic<std::uint64_t> g_cholesky_count{0};
std::atomic<std::uint64_t> g_fit_count{0};

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

Eigen::VectorXd apply_mean(const MeanFn& mean, const Eigen::MatrixXd& X) {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(X.rows());
  if (mean) {
    for (Eigen::Index i = 0; i < X.rows(); ++i) m[i] = mean(X.row(i));
  }
  return m;
}

}  // namespace

std::uint64_t cholesky_count() { return g_cholesky_count.load(); }
std::uint64_t fit_count() { return g_fit_count.load(); }
void reset_counters() {
  g_cholesky_count.store(0);
  g_fit_count.store(0);
}

CholResult jittered_cholesky(const Eigen::MatrixXd& A) {
  if (A.rows() != A.cols()) {
    throw std::invalid_argument("cholesky: matrix must be square");
  }
  g_cholesky_count.fetch_add(1, std::memory_order_relaxed);
  const Eigen::Index n = A.rows();
  if (n == 0) return {Eigen::MatrixXd(0, 0), 0.0};
  for (double jitter = 1e-10; jitter < 1.05e-4; jitter *= 10.0) {
    Eigen::MatrixXd B = A;
    B.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(B);
    if (llt.info() == Eigen::Success) {
      return {Eigen::MatrixXd(llt.matrixL()), jitter};
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A,
                                                    Eigen::EigenvaluesOnly);
  std::ostringstream msg;
  msg << "cholesky: matrix not positive definite after jitter 1e-4"
      << " (eigenvalue range [" << es.eigenvalues().minCoeff() << ", "
      << es.eigenvalues().maxCoeff() << "])";
  throw std::runtime_error(msg.str());
}

GaussianPredictive posterior(const Eigen::MatrixXd& X,
                             const Eigen::VectorXd& y,
                             const Eigen::MatrixXd& Xstar,
                             const KernelParams& kernel, double noise_var,
                             const MeanFn& prior_mean) {
  kernel.validate();
  if (noise_var < 0.0) {
    throw std::invalid_argument("posterior: negative noise variance");
  }
  if (X.rows() != y.size()) {
    throw std::invalid_argument("posterior: training size mismatch");
  }
  const Eigen::Index m = Xstar.rows();
  GaussianPredictive out;
  out.mean = apply_mean(prior_mean, Xstar);
  out.cov = rbf_gram_matrix(kernel, Xstar);
  out.cov.diagonal().array() += noise_var;
  if (X.rows() == 0) return out;

  Eigen::MatrixXd Kxx = rbf_gram_matrix(kernel, X);
  Kxx.diagonal().array() += noise_var;
  const CholResult chol = jittered_cholesky(Kxx);
  const Eigen::MatrixXd Kxs = rbf_cross_matrix(kernel, X, Xstar);
  const Eigen::MatrixXd A =
      chol.L.triangularView<Eigen::Lower>().solve(Kxs);  // n x m
  const Eigen::VectorXd resid = y - apply_mean(prior_mean, X);
  const Eigen::VectorXd beta =
      chol.L.triangularView<Eigen::Lower>().solve(resid);
  out.mean += A.transpose() * beta;
  out.cov -= A.transpose() * A;
  out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
  (void)m;
  return out;
}

Marginals posterior_marginals(const Eigen::MatrixXd& X,
                              const Eigen::VectorXd& y,
                              const Eigen::MatrixXd& Xstar,
                              const KernelParams& kernel, double noise_var,
                              const MeanFn& prior_mean) {
  kernel.validate();
  Marginals out;
  out.mean = apply_mean(prior_mean, Xstar);
  out.var = Eigen::VectorXd::Constant(Xstar.rows(),
                                      kernel.variance + noise_var);
  if (X.rows() == 0) return out;
  Eigen::MatrixXd Kxx = rbf_gram_matrix(kernel, X);
  Kxx.diagonal().array() += noise_var;
  const CholResult chol = jittered_cholesky(Kxx);
  const Eigen::MatrixXd Kxs = rbf_cross_matrix(kernel, X, Xstar);
  const Eigen::MatrixXd A = chol.L.triangularView<Eigen::Lower>().solve(Kxs);
  const Eigen::VectorXd resid = y - apply_mean(prior_mean, X);
  const Eigen::VectorXd beta =
      chol.L.triangularView<Eigen::Lower>().solve(resid);
  out.mean += A.transpose() * beta;
  out.var -= A.colwise().squaredNorm().transpose();
  out.var = out.var.cwiseMax(1e-15);
  return out;
}

double log_pdf(const Eigen::VectorXd& values, const GaussianPredictive& dist) {
  const Eigen::Index m = dist.mean.size();
  if (values.size() != m || dist.cov.rows() != m || dist.cov.cols() != m) {
    throw std::invalid_argument("log_pdf: dimension mismatch");
  }
  if (m == 0) return 0.0;
  const CholResult chol = jittered_cholesky(dist.cov);
  const double log_det = 2.0 * chol.L.diagonal().array().log().sum();
  const Eigen::VectorXd w =
      chol.L.triangularView<Eigen::Lower>().solve(values - dist.mean);
  return -0.5 * (m * kLog2Pi + log_det + w.squaredNorm());
}

double entropy(const GaussianPredictive& dist) {
  const Eigen::Index m = dist.cov.rows();
  if (m == 0) return 0.0;
  const CholResult chol = jittered_cholesky(dist.cov);
  const double log_det = 2.0 * chol.L.diagonal().array().log().sum();
  return 0.5 * (m * (kLog2Pi + 1.0) + log_det);
}

double safety_prob_nonneg(double mean, double var) {
  if (!(var > 0.0)) {
    throw std::invalid_argument("safety_prob: variance must be positive");
  }
  return 0.5 * (1.0 + std::erf(mean / std::sqrt(2.0 * var)));
}

double safety_prob_neg(double mean, double var) {
  return 1.0 - safety_prob_nonneg(mean, var);
}

double log_marginal_likelihood(const Eigen::MatrixXd& X,
                               const Eigen::VectorXd& y,
                               const KernelParams& kernel, double noise_var) {
  GaussianPredictive prior;
  prior.mean = Eigen::VectorXd::Zero(X.rows());
  prior.cov = rbf_gram_matrix(kernel, X);
  prior.cov.diagonal().array() += noise_var;
  return log_pdf(y, prior);
}

namespace {

double stable_sigmoid(double u) {
  if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

double inverse_sigmoid(double p) {
  p = std::min(std::max(p, 1e-9), 1.0 - 1e-9);
  return std::log(p / (1.0 - p));
}

// Negative log marginal likelihood and its gradient in the unconstrained
// parameterization theta_log = lo + (hi - lo) * sigmoid(u).
class MlObjective {
 public:
  MlObjective(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
              const FitOptions& opt)
      : y_(y), n_(static_cast<int>(X.rows())),
        dim_(static_cast<int>(X.cols())) {
    sqdist_.reserve(dim_);
    for (int d = 0; d < dim_; ++d) {
      Eigen::MatrixXd s(n_, n_);
      for (int i = 0; i < n_; ++i) {
        for (int j = 0; j < n_; ++j) {
          const double diff = X(i, d) - X(j, d);
          s(i, j) = diff * diff;
        }
      }
      sqdist_.push_back(std::move(s));
    }
    lo_.resize(dim_ + 2);
    hi_.resize(dim_ + 2);
    lo_[0] = opt.log_variance_lo;
    hi_[0] = opt.log_variance_hi;
    for (int d = 0; d < dim_; ++d) {
      lo_[1 + d] = opt.log_lengthscale_lo;
      hi_[1 + d] = opt.log_lengthscale_hi;
    }
    lo_[dim_ + 1] = opt.log_noise_lo;
    hi_[dim_ + 1] = opt.log_noise_hi;
  }

  int size() const { return dim_ + 2; }

  Eigen::VectorXd to_unconstrained(const Eigen::VectorXd& theta_log) const {
    Eigen::VectorXd u(size());
    for (int i = 0; i < size(); ++i) {
      u[i] = inverse_sigmoid((theta_log[i] - lo_[i]) / (hi_[i] - lo_[i]));
    }
    return u;
  }

  Eigen::VectorXd to_log_params(const Eigen::VectorXd& u) const {
    Eigen::VectorXd t(size());
    for (int i = 0; i < size(); ++i) {
      t[i] = lo_[i] + (hi_[i] - lo_[i]) * stable_sigmoid(u[i]);
    }
    return t;
  }

  double value_and_gradient(const Eigen::VectorXd& u,
                            Eigen::VectorXd& grad) const {
    const Eigen::VectorXd t = to_log_params(u);
    const double v = std::exp(t[0]);
    Eigen::VectorXd ls(dim_);
    for (int d = 0; d < dim_; ++d) ls[d] = std::exp(t[1 + d]);
    const double s2 = std::exp(t[dim_ + 1]);

    Eigen::MatrixXd expo = Eigen::MatrixXd::Zero(n_, n_);
    for (int d = 0; d < dim_; ++d) expo -= sqdist_[d] / (2.0 * ls[d] * ls[d]);
    const Eigen::MatrixXd Krbf = v * expo.array().exp().matrix();
    Eigen::MatrixXd K = Krbf;
    K.diagonal().array() += s2;

    const CholResult chol = jittered_cholesky(K);
    const Eigen::VectorXd w = chol.L.triangularView<Eigen::Lower>().solve(y_);
    const Eigen::VectorXd alpha =
        chol.L.transpose().triangularView<Eigen::Upper>().solve(w);
    const double log_det = 2.0 * chol.L.diagonal().array().log().sum();
    const double log_ml =
        -0.5 * (y_.dot(alpha) + log_det + n_ * kLog2Pi);

    Eigen::MatrixXd Kinv = Eigen::MatrixXd::Identity(n_, n_);
    chol.L.triangularView<Eigen::Lower>().solveInPlace(Kinv);
    chol.L.transpose().triangularView<Eigen::Upper>().solveInPlace(Kinv);
    const Eigen::MatrixXd W = alpha * alpha.transpose() - Kinv;

    Eigen::VectorXd g_log(size());
    g_log[0] = 0.5 * (W.array() * Krbf.array()).sum();
    for (int d = 0; d < dim_; ++d) {
      const Eigen::MatrixXd dK =
          (Krbf.array() * sqdist_[d].array() / (ls[d] * ls[d])).matrix();
      g_log[1 + d] = 0.5 * (W.array() * dK.array()).sum();
    }
    g_log[dim_ + 1] = 0.5 * s2 * W.trace();

    grad.resize(size());
    for (int i = 0; i < size(); ++i) {
      const double s = stable_sigmoid(u[i]);
      grad[i] = -g_log[i] * (hi_[i] - lo_[i]) * s * (1.0 - s);
    }
    return -log_ml;
  }

 private:
  Eigen::VectorXd y_;
  int n_;
  int dim_;
  std::vector<Eigen::MatrixXd> sqdist_;
  Eigen::VectorXd lo_, hi_;
};

struct LbfgsOutcome {
  Eigen::VectorXd u;
  double f = std::numeric_limits<double>::infinity();
};

LbfgsOutcome lbfgs_minimize(const MlObjective& obj, Eigen::VectorXd u,
                            int max_iterations) {
  constexpr int kMemory = 8;
  std::vector<Eigen::VectorXd> s_hist, y_hist;
  Eigen::VectorXd g(u.size());
  double f = obj.value_and_gradient(u, g);
  LbfgsOutcome best{u, f};

  for (int iter = 0; iter < max_iterations; ++iter) {
    if (g.lpNorm<Eigen::Infinity>() < 1e-8) break;

    // Two-loop recursion.
    Eigen::VectorXd q = g;
    const int k = static_cast<int>(s_hist.size());
    std::vector<double> alpha_coef(k), rho(k);
    for (int i = k - 1; i >= 0; --i) {
      rho[i] = 1.0 / y_hist[i].dot(s_hist[i]);
      alpha_coef[i] = rho[i] * s_hist[i].dot(q);
      q -= alpha_coef[i] * y_hist[i];
    }
    if (k > 0) {
      const double gamma =
          s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
      q *= gamma;
    }
    for (int i = 0; i < k; ++i) {
      const double beta = rho[i] * y_hist[i].dot(q);
      q += (alpha_coef[i] - beta) * s_hist[i];
    }
    Eigen::VectorXd direction = -q;
    if (direction.dot(g) > -1e-14 * g.norm() * direction.norm()) {
      direction = -g;  // fall back to steepest descent
    }

    // Armijo backtracking.
    double step = 1.0;
    Eigen::VectorXd u_new, g_new(u.size());
    double f_new = f;
    bool accepted = false;
    const double slope = direction.dot(g);
    for (int ls = 0; ls < 40; ++ls) {
      u_new = u + step * direction;
      f_new = obj.value_and_gradient(u_new, g_new);
      if (std::isfinite(f_new) && f_new <= f + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;

    const Eigen::VectorXd s_vec = u_new - u;
    const Eigen::VectorXd y_vec = g_new - g;
    if (y_vec.dot(s_vec) > 1e-12) {
      s_hist.push_back(s_vec);
      y_hist.push_back(y_vec);
      if (static_cast<int>(s_hist.size()) > kMemory) {
        s_hist.erase(s_hist.begin());
        y_hist.erase(y_hist.begin());
      }
    }
    const double f_drop = f - f_new;
    u = u_new;
    f = f_new;
    g = g_new;
    if (f < best.f) best = {u, f};
    if (f_drop < 1e-12 * (1.0 + std::abs(f))) break;
  }
  if (f < best.f) best = {u, f};
  return best;
}

}  // namespace

FitResult fit_type2_ml(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                       const FitOptions& options) {
  if (X.rows() == 0) {
    throw std::invalid_argument("fit_type2_ml: empty training set");
  }
  if (X.rows() != y.size()) {
    throw std::invalid_argument("fit_type2_ml: size mismatch");
  }
  g_fit_count.fetch_add(1, std::memory_order_relaxed);
  const int dim = static_cast<int>(X.cols());
  const MlObjective obj(X, y, options);

  const double y_var =
      y.size() > 1 ? (y.array() - y.mean()).square().sum() / y.size() : 1.0;
  auto clamp_log = [](double value, double lo, double hi) {
    return std::min(std::max(value, lo), hi);
  };

  std::vector<Eigen::VectorXd> inits;
  {
    Eigen::VectorXd t(dim + 2);
    t[0] = clamp_log(std::log(std::max(y_var, 1e-3)), options.log_variance_lo,
                     options.log_variance_hi);
    for (int d = 0; d < dim; ++d) t[1 + d] = std::log(0.3);
    t[dim + 1] = clamp_log(std::log(std::max(0.05 * y_var, 1e-4)),
                           options.log_noise_lo, options.log_noise_hi);
    inits.push_back(t);
  }
  Rng rng(options.seed);
  while (static_cast<int>(inits.size()) < std::max(1, options.restarts)) {
    Eigen::VectorXd t(dim + 2);
    t[0] = rng.uniform(std::log(0.05), std::log(5.0));
    for (int d = 0; d < dim; ++d) {
      t[1 + d] = rng.uniform(std::log(0.05), std::log(2.0));
    }
    t[dim + 1] = rng.uniform(options.log_noise_lo,
                             std::log(std::max(0.25 * y_var, 1e-3)));
    inits.push_back(t);
  }

  double best_f = std::numeric_limits<double>::infinity();
  double best_init_f = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_u;
  for (const Eigen::VectorXd& t0 : inits) {
    const Eigen::VectorXd u0 = obj.to_unconstrained(t0);
    Eigen::VectorXd g0(u0.size());
    const double f0 = obj.value_and_gradient(u0, g0);
    best_init_f = std::min(best_init_f, f0);
    if (f0 < best_f) {
      best_f = f0;
      best_u = u0;
    }
    const LbfgsOutcome out = lbfgs_minimize(obj, u0, options.max_iterations);
    if (out.f < best_f) {
      best_f = out.f;
      best_u = out.u;
    }
  }

  const Eigen::VectorXd t = obj.to_log_params(best_u);
  FitResult result;
  result.kernel.variance = std::exp(t[0]);
  result.kernel.lengthscales.resize(dim);
  for (int d = 0; d < dim; ++d) {
    result.kernel.lengthscales[d] = std::exp(t[1 + d]);
  }
  result.noise_var = std::exp(t[dim + 1]);
  result.log_ml = -best_f;
  result.degraded = !(best_f < best_init_f - 1e-12);
  return result;
}

}  // namespace asal::gp
