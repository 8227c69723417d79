#pragma once

#include <Eigen/Dense>
#include <optional>
#include <stdexcept>

namespace asal {

// Observation set over the unit hypercube. Inputs are always expressed in
// [0,1]^D; problems with native boxes rescale before building one of these.
struct Dataset {
  Eigen::MatrixXd inputs;                 // n x D
  Eigen::VectorXd outputs;                // n
  std::optional<Eigen::VectorXd> safety;  // n, present for constrained tasks

  int size() const { return static_cast<int>(inputs.rows()); }
  int dim() const { return static_cast<int>(inputs.cols()); }

  void validate() const {
    if (outputs.size() != inputs.rows()) {
      throw std::invalid_argument("dataset: outputs/inputs row mismatch");
    }
    if (safety && safety->size() != inputs.rows()) {
      throw std::invalid_argument("dataset: safety/inputs row mismatch");
    }
    if (inputs.size() > 0 &&
        (inputs.minCoeff() < 0.0 || inputs.maxCoeff() > 1.0)) {
      throw std::invalid_argument("dataset: inputs outside the unit hypercube");
    }
  }

  void append(const Eigen::VectorXd& x, double y,
              std::optional<double> z = std::nullopt) {
    const int n = size();
    inputs.conservativeResize(n + 1, x.size());
    inputs.row(n) = x.transpose();
    outputs.conservativeResize(n + 1);
    outputs[n] = y;
    if (safety) {
      if (!z) throw std::invalid_argument("dataset: missing safety value");
      safety->conservativeResize(n + 1);
      (*safety)[n] = *z;
    } else if (z) {
      throw std::invalid_argument("dataset: unexpected safety value");
    }
  }
};

}  // namespace asal
