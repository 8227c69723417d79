#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "asal/fourier.hpp"
#include "asal/kernel.hpp"

namespace asal::tape {

using Matrix = Eigen::MatrixXd;

struct Var {
  int index = -1;
  bool valid() const { return index >= 0; }
};

// Reverse-mode tape over dense matrix nodes. Scalars are 1x1 matrices.
// Constant subgraphs are pruned at record time: a node whose parents all
// carry no gradient stores only its value.
class Tape {
 public:
  Var input(Matrix value);     // leaf, participates in gradients
  Var constant(Matrix value);  // leaf, no gradient tracked

  const Matrix& value(Var v) const { return slots_[v.index].value; }
  double scalar(Var v) const { return slots_[v.index].value(0, 0); }
  const Matrix& adjoint(Var v) const;  // valid after backward()
  // Zero matrix when the node was never reached (e.g. an unused branch).
  Matrix adjoint_or_zero(Var v) const;
  bool needs_grad(Var v) const { return slots_[v.index].needs_grad; }

  // Runs reverse accumulation from a 1x1 root.
  void backward(Var root);

  void clear();
  int size() const { return static_cast<int>(slots_.size()); }

  // Op-builder plumbing.
  Var emplace(Matrix value, bool needs_grad,
              std::function<void(Tape&)> backward_fn);
  void accumulate(Var v, const Matrix& grad);

 private:
  struct Slot {
    Matrix value;
    Matrix adjoint;
    bool needs_grad = false;
    bool adjoint_set = false;
    std::function<void(Tape&)> backward_fn;
  };
  std::vector<Slot> slots_;
};

// Elementwise and structural ops.
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var neg(Tape& t, Var a);
Var scale(Tape& t, Var a, double k);          // k * a
Var add_const(Tape& t, Var a, double k);      // a + k (elementwise)
Var cmul(Tape& t, Var a, Var b);              // hadamard
Var cdiv(Tape& t, Var a, Var b);
// Product values are computed entry by entry (fixed ascending inner order),
// so each output row depends only on the matching input row: permuting a's
// rows permutes the product's rows bitwise.
Var matmul(Tape& t, Var a, Var b);
Var matmul_nt(Tape& t, Var a, Var b);         // a * b^T
Var transpose(Tape& t, Var a);
Var add_rowvec(Tape& t, Var a, Var row);      // broadcast 1 x m over rows
Var add_scaled_identity(Tape& t, Var a, double k);
Var concat_rows(Tape& t, const std::vector<Var>& parts);
Var concat_cols(Tape& t, const std::vector<Var>& parts);
Var block(Tape& t, Var a, int i, int j, int rows, int cols);
Var sum_all(Tape& t, Var a);                  // 1x1
Var sum_pooled_rows(Tape& t, Var a);          // 1 x m, order-canonical sum
Var matmul_ordered(Tape& t, Var a, Var b);    // order-canonical inner sums
Var cwise_max_const(Tape& t, Var a, double c);

Var exp_(Tape& t, Var a);
Var log_(Tape& t, Var a);
Var sqrt_(Tape& t, Var a);
Var square(Tape& t, Var a);
Var tanh_(Tape& t, Var a);
Var erf_(Tape& t, Var a);
Var cos_(Tape& t, Var a);
Var sin_(Tape& t, Var a);
Var gelu(Tape& t, Var a);

Var softmax_rows(Tape& t, Var a);             // order-canonical normalizers
Var layer_norm_rows(Tape& t, Var a, Var gain, Var bias);
Var logsumexp_all(Tape& t, Var a);            // 1x1, order-canonical

// Linear-algebra ops (jittered factorizations, matching the GP ladder).
Var logdet_spd(Tape& t, Var a);
Var solve_spd(Tape& t, Var a, Var b);
Var trisolve_lower_const(Tape& t, const Matrix& L, Var b);

// Kernel and simulated-function ops. The referenced parameter objects must
// outlive the tape.
Var rbf_cross(Tape& t, Var a, Var b, const KernelParams& kernel);
Var rbf_gram(Tape& t, Var a, const KernelParams& kernel);
Var fourier_eval(Tape& t, Var x, const FourierFunction& f);   // n x 1
Var sech_mean_eval(Tape& t, Var x, const SechMeanParams& m);  // n x 1

// Deterministic sum independent of addend order.
double ordered_sum(std::vector<double>& values);

}  // namespace asal::tape
