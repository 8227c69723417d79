#pragma once

#include <Eigen/Dense>
#include <stdexcept>

namespace asal {

// Anisotropic squared-exponential kernel:
//   k(x, x') = variance * exp(-1/2 * sum_d ((x_d - x'_d) / lengthscale_d)^2)
struct KernelParams {
  double variance = 1.0;
  Eigen::VectorXd lengthscales;  // D, all positive

  void validate() const {
    if (!(variance > 0.0)) {
      throw std::invalid_argument("kernel: variance must be positive");
    }
    if (lengthscales.size() == 0 || (lengthscales.array() <= 0.0).any()) {
      throw std::invalid_argument("kernel: lengthscales must be positive");
    }
  }
};

inline double rbf_kernel(const KernelParams& k, const Eigen::VectorXd& a,
                         const Eigen::VectorXd& b) {
  const Eigen::ArrayXd d = (a - b).array() / k.lengthscales.array();
  return k.variance * std::exp(-0.5 * d.square().sum());
}

// Pairwise kernel matrix between row sets A (n x D) and B (m x D).
inline Eigen::MatrixXd rbf_cross_matrix(const KernelParams& k,
                                        const Eigen::MatrixXd& A,
                                        const Eigen::MatrixXd& B) {
  const Eigen::MatrixXd As = A * k.lengthscales.cwiseInverse().asDiagonal();
  const Eigen::MatrixXd Bs = B * k.lengthscales.cwiseInverse().asDiagonal();
  const Eigen::VectorXd an = As.rowwise().squaredNorm();
  const Eigen::VectorXd bn = Bs.rowwise().squaredNorm();
  Eigen::MatrixXd d2 = -2.0 * As * Bs.transpose();
  d2.colwise() += an;
  d2.rowwise() += bn.transpose();
  return (d2.array().max(0.0) * -0.5).exp() * k.variance;
}

// Gram matrix with an exact k(x,x) = variance diagonal.
inline Eigen::MatrixXd rbf_gram_matrix(const KernelParams& k,
                                       const Eigen::MatrixXd& A) {
  Eigen::MatrixXd g = rbf_cross_matrix(k, A, A);
  g.diagonal().setConstant(k.variance);
  return g;
}

}  // namespace asal
