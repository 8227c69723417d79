#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>

#include "asal/dataset.hpp"
#include "asal/kernel.hpp"

namespace asal::gp {

// Optional prior mean over inputs; empty means zero.
using MeanFn = std::function<double(const Eigen::VectorXd&)>;

struct GaussianPredictive {
  Eigen::VectorXd mean;  // m
  Eigen::MatrixXd cov;   // m x m, noise-inclusive
};

struct Marginals {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;  // noise-inclusive
};

// Jittered Cholesky: adds jitter to the diagonal starting at 1e-10,
// escalating tenfold up to 1e-4 before giving up.
struct CholResult {
  Eigen::MatrixXd L;   // lower triangular
  double jitter = 0.0;
};
CholResult jittered_cholesky(const Eigen::MatrixXd& A);

// Instrumentation (process-wide): factorization and hyperparameter-fit
// counts, used to assert which deployment paths touch GP algebra.
std::uint64_t cholesky_count();
std::uint64_t fit_count();
void reset_counters();

// Noise-inclusive posterior of the latent-plus-noise observable:
//   mean = m(X*) + K*x (Kxx + s2 I)^-1 (y - m(X))
//   cov  = K** + s2 I - K*x (Kxx + s2 I)^-1 Kx*
// With zero training rows this reduces to the prior.
GaussianPredictive posterior(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                             const Eigen::MatrixXd& Xstar,
                             const KernelParams& kernel, double noise_var,
                             const MeanFn& prior_mean = {});

// Same predictive, but only per-point means and variances (for large
// candidate sets where the full covariance is never needed).
Marginals posterior_marginals(const Eigen::MatrixXd& X,
                              const Eigen::VectorXd& y,
                              const Eigen::MatrixXd& Xstar,
                              const KernelParams& kernel, double noise_var,
                              const MeanFn& prior_mean = {});

// Exact multivariate normal log density of `values` under the predictive.
double log_pdf(const Eigen::VectorXd& values, const GaussianPredictive& dist);

// Differential entropy: m/2 log(2 pi e) + 1/2 log det cov.
double entropy(const GaussianPredictive& dist);

// P(z >= 0) for z ~ N(mean, var). The complement is computed as 1 - p so the
// two probabilities always sum to exactly 1.
double safety_prob_nonneg(double mean, double var);
double safety_prob_neg(double mean, double var);

double log_marginal_likelihood(const Eigen::MatrixXd& X,
                               const Eigen::VectorXd& y,
                               const KernelParams& kernel, double noise_var);

struct FitOptions {
  // Box bounds in log space.
  double log_lengthscale_lo = std::log(1e-2);
  double log_lengthscale_hi = std::log(1e2);
  double log_variance_lo = std::log(1e-4);
  double log_variance_hi = std::log(1e2);
  double log_noise_lo = std::log(1e-6);
  double log_noise_hi = std::log(1e1);
  int restarts = 5;
  int max_iterations = 200;
  std::uint64_t seed = 0x51a7e5ULL;  // restarts are deterministic per fit
};

struct FitResult {
  KernelParams kernel;
  double noise_var = 0.0;
  double log_ml = 0.0;
  bool degraded = false;  // no restart improved on its initialization
};

// Type-II maximum likelihood for (variance, lengthscales, noise variance)
// with a zero prior mean, via bounded quasi-Newton iterations restarted from
// a small deterministic set of initializations.
FitResult fit_type2_ml(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                       const FitOptions& options = {});

}  // namespace asal::gp
