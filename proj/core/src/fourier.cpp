#include "asal/fourier.hpp"

#include <bit>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace asal {

double SechMeanParams::operator()(const Eigen::VectorXd& x) const {
  const Eigen::VectorXd u = Q.transpose() * (x.array() - 0.5).matrix();
  const double t = (w.array() * u.array().square()).sum() / x.size();
  return 3.2 * c * (-0.47 + 1.0 / std::cosh(t));
}

Eigen::VectorXd SechMeanParams::gradient(const Eigen::VectorXd& x) const {
  const Eigen::VectorXd u = Q.transpose() * (x.array() - 0.5).matrix();
  const double t = (w.array() * u.array().square()).sum() / x.size();
  const double sech = 1.0 / std::cosh(t);
  const double dsech = -sech * std::tanh(t);
  const Eigen::VectorXd dt_dx =
      Q * (2.0 / x.size() * w.array() * u.array()).matrix();
  return 3.2 * c * dsech * dt_dx;
}

double FourierFunction::raw(const Eigen::VectorXd& x) const {
  const double scale = std::sqrt(2.0 / freq.rows());
  const Eigen::ArrayXd arg = (freq * x + phase).array();
  return scale * (weight.array() * arg.cos()).sum();
}

double FourierFunction::operator()(const Eigen::VectorXd& x) const {
  double value = raw(x) - domain_shift;
  if (prior_mean) value += (*prior_mean)(x);
  return value;
}

Eigen::VectorXd FourierFunction::gradient(const Eigen::VectorXd& x) const {
  const double scale = std::sqrt(2.0 / freq.rows());
  const Eigen::ArrayXd arg = (freq * x + phase).array();
  const Eigen::VectorXd coef = (weight.array() * arg.sin()).matrix();
  Eigen::VectorXd g = -scale * (freq.transpose() * coef);
  if (prior_mean) g += prior_mean->gradient(x);
  return g;
}

Eigen::VectorXd FourierFunction::eval_rows(const Eigen::MatrixXd& X) const {
  const double scale = std::sqrt(2.0 / freq.rows());
  Eigen::MatrixXd arg = X * freq.transpose();  // n x L
  arg.rowwise() += phase.transpose();
  Eigen::VectorXd values = scale * (arg.array().cos().matrix() * weight);
  values.array() -= domain_shift;
  if (prior_mean) {
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      values[i] += (*prior_mean)(X.row(i));
    }
  }
  return values;
}

double analytic_domain_mean(const Eigen::MatrixXd& freq,
                            const Eigen::VectorXd& weight,
                            const Eigen::VectorXd& phase) {
  const int L = static_cast<int>(freq.rows());
  const int D = static_cast<int>(freq.cols());
  if (D > 30) throw std::invalid_argument("domain mean: dimension too large");
  const double scale = std::sqrt(2.0 / L);

  // Integrating cos D times shifts its phase by D*pi/2.
  auto trig = [D](double theta) {
    switch (D % 4) {
      case 0: return std::cos(theta);
      case 1: return std::sin(theta);
      case 2: return -std::cos(theta);
      default: return -std::sin(theta);
    }
  };

  double total = 0.0;
  for (int i = 0; i < L; ++i) {
    double prod = 1.0;
    bool degenerate = false;
    for (int d = 0; d < D; ++d) {
      if (std::abs(freq(i, d)) < 1e-5) degenerate = true;
      prod *= freq(i, d);
    }
    const double coef =
        degenerate ? std::copysign(1e5, prod == 0.0 ? 1.0 : prod) : 1.0 / prod;

    double corner_sum = 0.0;
    for (unsigned corner = 0; corner < (1u << D); ++corner) {
      double theta = phase[i];
      for (int d = 0; d < D; ++d) {
        if (corner & (1u << d)) theta += freq(i, d);
      }
      const int ones = std::popcount(corner);
      const double sign = ((D - ones) % 2 == 0) ? 1.0 : -1.0;
      corner_sum += sign * trig(theta);
    }
    total += weight[i] * scale * coef * corner_sum;
  }
  return total;
}

FourierFunction sample_fourier_function(
    Rng& rng, const KernelParams& kernel, int n_features,
    std::optional<SechMeanParams> prior_mean) {
  kernel.validate();
  const int D = static_cast<int>(kernel.lengthscales.size());
  FourierFunction f;
  f.freq.resize(n_features, D);
  f.weight.resize(n_features);
  f.phase.resize(n_features);
  const double weight_std = std::sqrt(kernel.variance);
  for (int i = 0; i < n_features; ++i) {
    f.weight[i] = rng.normal(0.0, weight_std);
    for (int d = 0; d < D; ++d) {
      f.freq(i, d) = rng.normal(0.0, 1.0 / kernel.lengthscales[d]);
    }
    f.phase[i] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  f.domain_shift = analytic_domain_mean(f.freq, f.weight, f.phase);
  f.prior_mean = std::move(prior_mean);
  return f;
}

}  // namespace asal
