#pragma once

#include <Eigen/Dense>
#include <optional>

#include "asal/kernel.hpp"
#include "asal/rng.hpp"

namespace asal {

// Bump-shaped prior mean for constraint functions:
//   mu(x) = 3.2 c (-0.47 + sech((1/D) sum_d w_d u_d^2)),  u = Q^T (x - 0.5)
// The constants keep the function roughly zero-mean with unit variance over
// the unit square for c = 1, w_d = 10 D, Q = I.
struct SechMeanParams {
  double c = 1.0;
  Eigen::VectorXd w;  // D, positive
  Eigen::MatrixXd Q;  // D x D orthogonal

  double operator()(const Eigen::VectorXd& x) const;
  Eigen::VectorXd gradient(const Eigen::VectorXd& x) const;
};

// Random cosine-feature sample of a squared-exponential GP:
//   raw(x) = sqrt(2/L) sum_i weight_i cos(freq_i . x + phase_i)
//   f(x)   = prior_mean(x) + raw(x) - domain_shift
// domain_shift is the exact integral of raw over [0,1]^D, so sampled
// functions are centered over the domain.
struct FourierFunction {
  Eigen::MatrixXd freq;    // L x D
  Eigen::VectorXd weight;  // L
  Eigen::VectorXd phase;   // L
  double domain_shift = 0.0;
  std::optional<SechMeanParams> prior_mean;

  int dim() const { return static_cast<int>(freq.cols()); }
  double raw(const Eigen::VectorXd& x) const;
  double operator()(const Eigen::VectorXd& x) const;
  Eigen::VectorXd gradient(const Eigen::VectorXd& x) const;
  Eigen::VectorXd eval_rows(const Eigen::MatrixXd& X) const;
};

// Exact integral of the cosine sum over the unit cube via iterated
// antiderivatives (one signed corner evaluation per vertex). Features with a
// near-zero frequency component (|a| < 1e-5) replace the unbounded 1/prod(a)
// magnitude by 1e5, keeping its sign.
double analytic_domain_mean(const Eigen::MatrixXd& freq,
                            const Eigen::VectorXd& weight,
                            const Eigen::VectorXd& phase);

// Draws weights ~ N(0, variance), frequencies ~ N(0, 1/lengthscale_d) per
// dimension, phases ~ U[0, 2pi), then centers the function over the domain.
FourierFunction sample_fourier_function(
    Rng& rng, const KernelParams& kernel, int n_features = 100,
    std::optional<SechMeanParams> prior_mean = std::nullopt);

}  // namespace asal
