#include "asal/tape.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

#include "asal/gp.hpp"

namespace asal::tape {

namespace {

void require(bool cond, const char* what) {
  if (!cond) throw std::invalid_argument(what);
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
constexpr double kTwoInvSqrtPi = 1.1283791670955125739;

bool any_grad(const Tape& t, std::initializer_list<Var> vars) {
  for (const Var v : vars) {
    if (t.needs_grad(v)) return true;
  }
  return false;
}

// Products evaluated entry by entry with one accumulator running over k in
// ascending order. Each entry then depends only on its own row of A and
// column of B, so permuting A's rows permutes the product's rows without
// changing a single bit. Blocked GEMM kernels do not give that guarantee:
// they may accumulate a row differently depending on where it falls in the
// packet/tail split.
Matrix product_rowwise(const Matrix& A, const Matrix& B) {
  Matrix v(A.rows(), B.cols());
  for (Eigen::Index j = 0; j < B.cols(); ++j) {
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
      double acc = 0.0;
      for (Eigen::Index k = 0; k < A.cols(); ++k) acc += A(i, k) * B(k, j);
      v(i, j) = acc;
    }
  }
  return v;
}

Matrix product_rowwise_nt(const Matrix& A, const Matrix& B) {
  Matrix v(A.rows(), B.rows());
  for (Eigen::Index j = 0; j < B.rows(); ++j) {
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
      double acc = 0.0;
      for (Eigen::Index k = 0; k < A.cols(); ++k) acc += A(i, k) * B(j, k);
      v(i, j) = acc;
    }
  }
  return v;
}

}  // namespace

double ordered_sum(std::vector<double>& values) {
  std::sort(values.begin(), values.end());
  double s = 0.0;
  for (const double v : values) s += v;
  return s;
}

Var Tape::input(Matrix value) { return emplace(std::move(value), true, nullptr); }

Var Tape::constant(Matrix value) {
  return emplace(std::move(value), false, nullptr);
}

Var Tape::emplace(Matrix value, bool needs_grad,
                  std::function<void(Tape&)> backward_fn) {
  Slot slot;
  slot.value = std::move(value);
  slot.needs_grad = needs_grad;
  slot.backward_fn = std::move(backward_fn);
  slots_.push_back(std::move(slot));
  return Var{static_cast<int>(slots_.size()) - 1};
}

const Matrix& Tape::adjoint(Var v) const {
  const Slot& slot = slots_[v.index];
  if (!slot.adjoint_set) {
    throw std::logic_error("tape: adjoint read before backward reached node");
  }
  return slot.adjoint;
}

Matrix Tape::adjoint_or_zero(Var v) const {
  const Slot& slot = slots_[v.index];
  if (!slot.adjoint_set) {
    return Matrix::Zero(slot.value.rows(), slot.value.cols());
  }
  return slot.adjoint;
}

void Tape::accumulate(Var v, const Matrix& grad) {
  Slot& slot = slots_[v.index];
  if (!slot.needs_grad) return;
  if (!slot.adjoint_set) {
    slot.adjoint = grad;
    slot.adjoint_set = true;
  } else {
    slot.adjoint += grad;
  }
}

void Tape::backward(Var root) {
  require(root.valid() && root.index < size(), "tape: bad backward root");
  Slot& r = slots_[root.index];
  require(r.value.rows() == 1 && r.value.cols() == 1,
          "tape: backward root must be scalar");
  for (Slot& s : slots_) s.adjoint_set = false;
  r.adjoint = Matrix::Ones(1, 1);
  r.adjoint_set = true;
  for (int i = root.index; i >= 0; --i) {
    Slot& slot = slots_[i];
    if (slot.adjoint_set && slot.backward_fn) slot.backward_fn(*this);
  }
}

void Tape::clear() { slots_.clear(); }

Var add(Tape& t, Var a, Var b) {
  const Matrix& A = t.value(a);
  const Matrix& B = t.value(b);
  require(A.rows() == B.rows() && A.cols() == B.cols(), "add: shape mismatch");
  Matrix v = A + B;
  if (!any_grad(t, {a, b})) return t.emplace(std::move(v), false, nullptr);
  const Var out{t.size()};
  t.emplace(std::move(v), true, [a, b, out](Tape& tt) {
    const Matrix& g = tt.adjoint(out);
    tt.accumulate(a, g);
    tt.accumulate(b, g);
  });
  return out;
}

Var sub(Tape& t, Var a, Var b) {
  const Matrix& A = t.value(a);
  const Matrix& B = t.value(b);
  require(A.rows() == B.rows() && A.cols() == B.cols(), "sub: shape mismatch");
  Matrix v = A - B;
  if (!any_grad(t, {a, b})) return t.emplace(std::move(v), false, nullptr);
  const Var out{t.size()};
  t.emplace(std::move(v), true, [a, b, out](Tape& tt) {
    const Matrix& g = tt.adjoint(out);
    tt.accumulate(a, g);
    tt.accumulate(b, Matrix(-g));
  });
  return out;
}

Var neg(Tape& t, Var a) { return scale(t, a, -1.0); }

Var scale(Tape& t, Var a, double k) {
  Matrix v = k * t.value(a);
  if (!t.needs_grad(a)) return t.emplace(std::move(v), false, nullptr);
  const Var out{t.size()};
  t.emplace(std::move(v), true, [a, k, out](Tape& tt) {
    tt.accumulate(a, Matrix(k * tt.adjoint(out)));
  });
  return out;
}

Var add_const(Tape& t, Var a, double k) {
  Matrix v = (t.value(a).array() + k).matrix();
  if (!t.needs_grad(a)) return t.emplace(std::move(v), false, nullptr);
  const Var out{t.size()};
  t.emplace(std::move(v), true, [a, out](Tape& tt) {
    tt.accumulate(a, tt.adjoint(out));
  });
  return out;
}

Var cmul(Tape& t, Var a, Var b) {
  const Matrix& A = t.value(a);
  const Matrix& B = t.value(b);
  require(A.rows() == B.rows() && A.cols() == B.cols(), "cmul: shape mismatch");
  Matrix v = A.cwiseProduct(B);
  if (!any_grad(t, {a, b})) return t.emplace(std::move(v), false, nullptr);
  const Var out{t.size()};
  t.emplace(std::move(v), true, [a, b, out](Tape& tt) {
    const Matrix& g = tt.adjoint(out);
    tt.accumulate(a, Matrix(g.cwiseProduct(tt.value(b))));
    tt.accumulate(b, Matrix(g.cwiseProduct(tt.value(a))));
  });
  return out;
}

Var cdiv(Tape& t, Var a, Var b) {
  const Matrix& A = t.value(a);
  const Matrix& B = t.value(b);
  require(A.rows() == B.rows() && A.cols() == B.cols(), "cdiv: shape mismatch");
  Matrix v = A.cwiseQuotient(B);
  if (!any_grad(t, {a, b})) return t.emplace(std::move(v), false, nullptr);
  const Var out{t.size()};
  t.emplace(std::move(v), true, [a, b, out](Tape& tt) {
    const Matrix& g = tt.adjoint(out);
    const Matrix& B_ = tt.value(b);
    tt.accumulate(a, Matrix(g.cwiseQuotient(B_)));
    tt.accumulate(b,
                  Matrix(-g.cwiseProduct(tt.value(out)).cwiseQuotient(B_)));
  });
  return out;
}

Var matmul(Tape& t, Var a, Var b) {
  const Matrix& A = t.value(a);
  const Matrix& B = t.value(b);
  require(A.cols() == B.rows(), "matmul: inner dim mismatch");
  Matrix v = product_rowwise(A, B);
  if (!any_grad(t, {a, b})) return t.emplace(std::move(v), false, nullptr);
  const Var out{t.size()};
  t.emplace(std::move(v), true, [a, b, out](Tape& tt) {
    const Matrix& g = tt.adjoint(out);
    tt.accumulate(a, Matrix(g * tt.value(b).transpose()));
    tt.accumulate(b, Matrix(tt.value(a).transpose() * g));
  });
  return out;
}

Var matmul_nt(Tape& t, Var a, Var b) {
  const Matrix& A = t.value(a);
  const Matrix& B = t.value(b);
  require(A.cols() == B.cols(), "matmul_nt: inner dim mismatch");
  Matrix v = product_rowwise_nt(A, B);
  if (!any_grad(t, {a, b})) return t.emplace(std::move(v), false, nullptr);
  const Var out{t.size()};
  t.emplace(std::move(v), true, [a, b, out](Tape& tt) {
    const Matrix& g = tt.adjoint(out);
    tt.accumulate(a, Matrix(g * tt.value(b)));
    tt.accumulate(b, Matrix(g.transpose() * tt.value(a)));
  });
  return out;
}

Var transpose(Tape& t, Var a) {
  Matrix v = t.value(a).transpose();
  if (!t.needs_grad(a)) return t.emplace(std::move(v), false, nullptr);
  const Var out{t.size()};
  t.emplace(std::move(v), true, [a, out](Tape& tt) {
    tt.accumulate(a, Matrix(tt.adjoint(out).transpose()));
  });
  return out;
}

Var add_rowvec(Tape& t, Var a, Var row) {
  const Matrix& A = t.value(a);
  const Matrix& R = t.value(row);
  require(R.rows() == 1 && R.cols() == A.cols(), "add_rowvec: shape mismatch");
  Matrix v = A;
  v.rowwise() += R.row(0);
  if (!any_grad(t, {a, row})) return t.emplace(std::move(v), false, nullptr);
  const Var out{t.size()};
  t.emplace(std::move(v), true, [a, row, out](Tape& tt) {
    const Matrix& g = tt.adjoint(out);
    tt.accumulate(a, g);
    tt.accumulate(row, Matrix(g.colwise().sum()));
  });
  return out;
}

Var add_scaled_identity(Tape& t, Var a, double k) {
  const Matrix& A = t.value(a);
  require(A.rows() == A.cols(), "add_scaled_identity: square required");
  Matrix v = A;
  v.diagonal().array() += k;
  if (!t.needs_grad(a)) return t.emplace(std::move(v), false, nullptr);
  const Var out{t.size()};
  t.emplace(std::move(v), true, [a, out](Tape& tt) {
    tt.accumulate(a, tt.adjoint(out));
  });
  return out;
}

Var concat_rows(Tape& t, const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows: empty");
  Eigen::Index rows = 0;
  const Eigen::Index cols = t.value(parts[0]).cols();
  bool ng = false;
  for (const Var p : parts) {
    require(t.value(p).cols() == cols, "concat_rows: column mismatch");
    rows += t.value(p).rows();
    ng = ng || t.needs_grad(p);
  }
  Matrix v(rows, cols);
  Eigen::Index at = 0;
  for (const Var p : parts) {
    v.middleRows(at, t.value(p).rows()) = t.value(p);
    at += t.value(p).rows();
  }
  if (!ng) return t.emplace(std::move(v), false, nullptr);
  const Var out{t.size()};
  std::vector<Var> ps = parts;
  t.emplace(std::move(v), true, [ps, out](Tape& tt) {
    const Matrix& g = tt.adjoint(out);
    Eigen::Index at2 = 0;
    for (const Var p : ps) {
      const Eigen::Index r = tt.value(p).rows();
      tt.accumulate(p, Matrix(g.middleRows(at2, r)));
      at2 += r;
    }
  });
  return out;
}

Var concat_cols(Tape& t, const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols: empty");
  Eigen::Index cols = 0;
  const Eigen::Index rows = t.value(parts[0]).rows();
  bool ng = false;
  for (const Var p : parts) {
    require(t.value(p).rows() == rows, "concat_cols: row mismatch");
    cols += t.value(p).cols();
    ng = ng || t.needs_grad(p);
  }
  Matrix v(rows, cols);
  Eigen::Index at = 0;
  for (const Var p : parts) {
    v.middleCols(at, t.value(p).cols()) = t.value(p);
    at += t.value(p).cols();
  }
  if (!ng) return t.emplace(std::move(v), false, nullptr);
  const Var out{t.size()};
  std::vector<Var> ps = parts;
  t.emplace(std::move(v), true, [ps, out](Tape& tt) {
    const Matrix& g = tt.adjoint(out);
    Eigen::Index at2 = 0;
    for (const Var p : ps) {
      const Eigen::Index c = tt.value(p).cols();
      tt.accumulate(p, Matrix(g.middleCols(at2, c)));
      at2 += c;
    }
  });
  return out;
}

Var block(Tape& t, Var a, int i, int j, int rows, int cols) {
  const Matrix& A = t.value(a);
  require(i >= 0 && j >= 0 && i + rows <= A.rows() && j + cols <= A.cols(),
          "block: out of range");
  Matrix v = A.block(i, j, rows, cols);
  if (!t.needs_grad(a)) return t.emplace(std::move(v), false, nullptr);
  const Var out{t.size()};
  const Eigen::Index pr = A.rows(), pc = A.cols();
  t.emplace(std::move(v), true, [a, i, j, rows, cols, pr, pc, out](Tape& tt) {
    Matrix g = Matrix::Zero(pr, pc);
    g.block(i, j, rows, cols) = tt.adjoint(out);
    tt.accumulate(a, g);
  });
  return out;
}

Var sum_all(Tape& t, Var a) {
  Matrix v(1, 1);
  v(0, 0) = t.value(a).sum();
  if (!t.needs_grad(a)) return t.emplace(std::move(v), false, nullptr);
  const Var out{t.size()};
  t.emplace(std::move(v), true, [a, out](Tape& tt) {
    const double g = tt.adjoint(out)(0, 0);
    tt.accumulate(a, Matrix(Matrix::Constant(tt.value(a).rows(),
                                             tt.value(a).cols(), g)));
  });
  return out;
}

Var sum_pooled_rows(Tape& t, Var a) {
  const Matrix& A = t.value(a);
  Matrix v = Matrix::Zero(1, A.cols());
  std::vector<double> buf(static_cast<size_t>(A.rows()));
  for (Eigen::Index j = 0; j < A.cols(); ++j) {
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
      buf[static_cast<size_t>(i)] = A(i, j);
    }
    v(0, j) = ordered_sum(buf);
  }
  if (!t.needs_grad(a)) return t.emplace(std::move(v), false, nullptr);
  const Var out{t.size()};
  t.emplace(std::move(v), true, [a, out](Tape& tt) {
    const Matrix& g = tt.adjoint(out);
    Matrix ga(tt.value(a).rows(), tt.value(a).cols());
    for (Eigen::Index j = 0; j < ga.cols(); ++j) ga.col(j).setConstant(g(0, j));
    tt.accumulate(a, ga);
  });
  return out;
}

Var matmul_ordered(Tape& t, Var a, Var b) {
  const Matrix& A = t.value(a);
  const Matrix& B = t.value(b);
  require(A.cols() == B.rows(), "matmul_ordered: inner dim mismatch");
  Matrix v(A.rows(), B.cols());
  std::vector<double> buf(static_cast<size_t>(A.cols()));
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    for (Eigen::Index j = 0; j < B.cols(); ++j) {
      for (Eigen::Index l = 0; l < A.cols(); ++l) {
        buf[static_cast<size_t>(l)] = A(i, l) * B(l, j);
      }
      v(i, j) = ordered_sum(buf);
    }
  }
  if (!any_grad(t, {a, b})) return t.emplace(std::move(v), false, nullptr);
  const Var out{t.size()};
  t.emplace(std::move(v), true, [a, b, out](Tape& tt) {
    const Matrix& g = tt.adjoint(out);
    tt.accumulate(a, Matrix(g * tt.value(b).transpose()));
    tt.accumulate(b, Matrix(tt.value(a).transpose() * g));
  });
  return out;
}

Var cwise_max_const(Tape& t, Var a, double c) {
  Matrix v = t.value(a).cwiseMax(c);
  if (!t.needs_grad(a)) return t.emplace(std::move(v), false, nullptr);
  const Var out{t.size()};
  t.emplace(std::move(v), true, [a, c, out](Tape& tt) {
    const Matrix& g = tt.adjoint(out);
    const Matrix mask = (tt.value(a).array() > c).cast<double>().matrix();
    tt.accumulate(a, Matrix(g.cwiseProduct(mask)));
  });
  return out;
}

namespace {

template <typename Fwd, typename Bwd>
Var cwise_op(Tape& t, Var a, Fwd fwd, Bwd bwd_factor) {
  Matrix v = t.value(a).unaryExpr(fwd);
  if (!t.needs_grad(a)) return t.emplace(std::move(v), false, nullptr);
  const Var out{t.size()};
  t.emplace(std::move(v), true, [a, bwd_factor, out](Tape& tt) {
    const Matrix factor = tt.value(a).unaryExpr(bwd_factor);
    tt.accumulate(a, Matrix(tt.adjoint(out).cwiseProduct(factor)));
  });
  return out;
}

}  // namespace

Var exp_(Tape& t, Var a) {
  return cwise_op(
      t, a, [](double x) { return std::exp(x); },
      [](double x) { return std::exp(x); });
}

Var log_(Tape& t, Var a) {
  return cwise_op(
      t, a, [](double x) { return std::log(x); },
      [](double x) { return 1.0 / x; });
}

Var sqrt_(Tape& t, Var a) {
  return cwise_op(
      t, a, [](double x) { return std::sqrt(x); },
      [](double x) { return 0.5 / std::sqrt(x); });
}

Var square(Tape& t, Var a) {
  return cwise_op(
      t, a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var tanh_(Tape& t, Var a) {
  return cwise_op(
      t, a, [](double x) { return std::tanh(x); },
      [](double x) {
        const double th = std::tanh(x);
        return 1.0 - th * th;
      });
}

Var erf_(Tape& t, Var a) {
  return cwise_op(
      t, a, [](double x) { return std::erf(x); },
      [](double x) { return kTwoInvSqrtPi * std::exp(-x * x); });
}

Var cos_(Tape& t, Var a) {
  return cwise_op(
      t, a, [](double x) { return std::cos(x); },
      [](double x) { return -std::sin(x); });
}

Var sin_(Tape& t, Var a) {
  return cwise_op(
      t, a, [](double x) { return std::sin(x); },
      [](double x) { return std::cos(x); });
}

Var gelu(Tape& t, Var a) {
  return cwise_op(
      t, a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [](double x) {
        const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
        return cdf + x * pdf;
      });
}

Var softmax_rows(Tape& t, Var a) {
  const Matrix& A = t.value(a);
  Matrix v(A.rows(), A.cols());
  std::vector<double> buf(static_cast<size_t>(A.cols()));
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    const double m = A.row(i).maxCoeff();
    for (Eigen::Index j = 0; j < A.cols(); ++j) {
      const double e = std::exp(A(i, j) - m);
      buf[static_cast<size_t>(j)] = e;
      v(i, j) = e;
    }
    std::vector<double> terms = buf;
    const double norm = ordered_sum(terms);
    v.row(i) /= norm;
  }
  if (!t.needs_grad(a)) return t.emplace(std::move(v), false, nullptr);
  const Var out{t.size()};
  t.emplace(std::move(v), true, [a, out](Tape& tt) {
    const Matrix& g = tt.adjoint(out);
    const Matrix& s = tt.value(out);
    Matrix ga(s.rows(), s.cols());
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      const double inner = g.row(i).dot(s.row(i));
      ga.row(i) = s.row(i).cwiseProduct((g.row(i).array() - inner).matrix());
    }
    tt.accumulate(a, ga);
  });
  return out;
}

Var layer_norm_rows(Tape& t, Var a, Var gain, Var bias) {
  const Matrix& A = t.value(a);
  const Matrix& G = t.value(gain);
  const Matrix& B = t.value(bias);
  require(G.rows() == 1 && B.rows() == 1 && G.cols() == A.cols() &&
              B.cols() == A.cols(),
          "layer_norm: shape mismatch");
  constexpr double kEps = 1e-5;
  const Eigen::Index n = A.rows(), m = A.cols();
  auto xhat = std::make_shared<Matrix>(n, m);
  auto inv_std = std::make_shared<Eigen::VectorXd>(n);
  Matrix v(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = A.row(i).mean();
    const double var = (A.row(i).array() - mu).square().mean();
    const double is = 1.0 / std::sqrt(var + kEps);
    (*inv_std)[i] = is;
    xhat->row(i) = ((A.row(i).array() - mu) * is).matrix();
    v.row(i) = xhat->row(i).cwiseProduct(G.row(0)) + B.row(0);
  }
  if (!any_grad(t, {a, gain, bias})) {
    return t.emplace(std::move(v), false, nullptr);
  }
  const Var out{t.size()};
  t.emplace(std::move(v), true, [a, gain, bias, xhat, inv_std, out](Tape& tt) {
    const Matrix& g = tt.adjoint(out);
    const Matrix& G_ = tt.value(gain);
    const Eigen::Index n2 = g.rows(), m2 = g.cols();
    Matrix ga(n2, m2);
    Eigen::RowVectorXd dgain = Eigen::RowVectorXd::Zero(m2);
    Eigen::RowVectorXd dbias = Eigen::RowVectorXd::Zero(m2);
    for (Eigen::Index i = 0; i < n2; ++i) {
      const Eigen::RowVectorXd gx = g.row(i).cwiseProduct(G_.row(0));
      const double mean_gx = gx.mean();
      const double mean_gx_xhat = gx.cwiseProduct(xhat->row(i)).mean();
      ga.row(i) =
          (((gx.array() - mean_gx) - xhat->row(i).array() * mean_gx_xhat) *
           (*inv_std)[i])
              .matrix();
      dgain += g.row(i).cwiseProduct(xhat->row(i));
      dbias += g.row(i);
    }
    tt.accumulate(a, ga);
    tt.accumulate(gain, Matrix(dgain));
    tt.accumulate(bias, Matrix(dbias));
  });
  return out;
}

Var logsumexp_all(Tape& t, Var a) {
  const Matrix& A = t.value(a);
  require(A.size() > 0, "logsumexp: empty");
  const double m = A.maxCoeff();
  std::vector<double> buf;
  buf.reserve(static_cast<size_t>(A.size()));
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    for (Eigen::Index j = 0; j < A.cols(); ++j) {
      buf.push_back(std::exp(A(i, j) - m));
    }
  }
  Matrix v(1, 1);
  v(0, 0) = m + std::log(ordered_sum(buf));
  if (!t.needs_grad(a)) return t.emplace(std::move(v), false, nullptr);
  const Var out{t.size()};
  t.emplace(std::move(v), true, [a, out](Tape& tt) {
    const double g = tt.adjoint(out)(0, 0);
    const double lse = tt.value(out)(0, 0);
    tt.accumulate(a,
                  Matrix((g * (tt.value(a).array() - lse).exp()).matrix()));
  });
  return out;
}

Var logdet_spd(Tape& t, Var a) {
  const Matrix& A = t.value(a);
  require(A.rows() == A.cols(), "logdet: square required");
  const gp::CholResult chol = gp::jittered_cholesky(A);
  Matrix v(1, 1);
  v(0, 0) = 2.0 * chol.L.diagonal().array().log().sum();
  if (!t.needs_grad(a)) return t.emplace(std::move(v), false, nullptr);
  auto L = std::make_shared<Matrix>(chol.L);
  const Var out{t.size()};
  t.emplace(std::move(v), true, [a, L, out](Tape& tt) {
    const double g = tt.adjoint(out)(0, 0);
    Matrix inv = Matrix::Identity(L->rows(), L->rows());
    L->triangularView<Eigen::Lower>().solveInPlace(inv);
    L->transpose().triangularView<Eigen::Upper>().solveInPlace(inv);
    tt.accumulate(a, Matrix(g * inv));
  });
  return out;
}

Var solve_spd(Tape& t, Var a, Var b) {
  const Matrix& A = t.value(a);
  const Matrix& B = t.value(b);
  require(A.rows() == A.cols() && A.cols() == B.rows(),
          "solve_spd: shape mismatch");
  const gp::CholResult chol = gp::jittered_cholesky(A);
  auto L = std::make_shared<Matrix>(chol.L);
  Matrix x = B;
  L->triangularView<Eigen::Lower>().solveInPlace(x);
  L->transpose().triangularView<Eigen::Upper>().solveInPlace(x);
  if (!any_grad(t, {a, b})) return t.emplace(std::move(x), false, nullptr);
  const Var out{t.size()};
  t.emplace(std::move(x), true, [a, b, L, out](Tape& tt) {
    const Matrix& g = tt.adjoint(out);
    Matrix s = g;
    L->triangularView<Eigen::Lower>().solveInPlace(s);
    L->transpose().triangularView<Eigen::Upper>().solveInPlace(s);
    tt.accumulate(b, s);
    tt.accumulate(a, Matrix(-s * tt.value(out).transpose()));
  });
  return out;
}

Var trisolve_lower_const(Tape& t, const Matrix& L, Var b) {
  const Matrix& B = t.value(b);
  require(L.rows() == L.cols() && L.cols() == B.rows(),
          "trisolve: shape mismatch");
  Matrix x = L.triangularView<Eigen::Lower>().solve(B);
  if (!t.needs_grad(b)) return t.emplace(std::move(x), false, nullptr);
  auto Lp = std::make_shared<Matrix>(L);
  const Var out{t.size()};
  t.emplace(std::move(x), true, [b, Lp, out](Tape& tt) {
    tt.accumulate(b,
                  Matrix(Lp->transpose().triangularView<Eigen::Upper>().solve(
                      tt.adjoint(out))));
  });
  return out;
}

Var rbf_cross(Tape& t, Var a, Var b, const KernelParams& kernel) {
  const Matrix& A = t.value(a);
  const Matrix& B = t.value(b);
  require(A.cols() == B.cols(), "rbf_cross: dim mismatch");
  Matrix v = rbf_cross_matrix(kernel, A, B);
  if (!any_grad(t, {a, b})) return t.emplace(std::move(v), false, nullptr);
  const Eigen::ArrayXd inv_l2 = kernel.lengthscales.array().square().inverse();
  const Var out{t.size()};
  t.emplace(std::move(v), true, [a, b, inv_l2, out](Tape& tt) {
    const Matrix& g = tt.adjoint(out);
    const Matrix& K = tt.value(out);
    const Matrix& A_ = tt.value(a);
    const Matrix& B_ = tt.value(b);
    Matrix ga = Matrix::Zero(A_.rows(), A_.cols());
    Matrix gb = Matrix::Zero(B_.rows(), B_.cols());
    for (Eigen::Index i = 0; i < A_.rows(); ++i) {
      for (Eigen::Index j = 0; j < B_.rows(); ++j) {
        const double w = g(i, j) * K(i, j);
        if (w == 0.0) continue;
        const Eigen::RowVectorXd d =
            w * ((B_.row(j) - A_.row(i)).array() * inv_l2.transpose())
                    .matrix();
        ga.row(i) += d;
        gb.row(j) -= d;
      }
    }
    tt.accumulate(a, ga);
    tt.accumulate(b, gb);
  });
  return out;
}

Var rbf_gram(Tape& t, Var a, const KernelParams& kernel) {
  const Matrix& A = t.value(a);
  Matrix v = rbf_gram_matrix(kernel, A);
  if (!t.needs_grad(a)) return t.emplace(std::move(v), false, nullptr);
  const Eigen::ArrayXd inv_l2 = kernel.lengthscales.array().square().inverse();
  const Var out{t.size()};
  t.emplace(std::move(v), true, [a, inv_l2, out](Tape& tt) {
    const Matrix& g = tt.adjoint(out);
    const Matrix& K = tt.value(out);
    const Matrix& A_ = tt.value(a);
    Matrix ga = Matrix::Zero(A_.rows(), A_.cols());
    for (Eigen::Index i = 0; i < A_.rows(); ++i) {
      for (Eigen::Index j = 0; j < A_.rows(); ++j) {
        if (i == j) continue;
        const double w = g(i, j) * K(i, j);
        if (w == 0.0) continue;
        const Eigen::RowVectorXd d =
            w * ((A_.row(j) - A_.row(i)).array() * inv_l2.transpose())
                    .matrix();
        ga.row(i) += d;
        ga.row(j) -= d;
      }
    }
    tt.accumulate(a, ga);
  });
  return out;
}

Var fourier_eval(Tape& t, Var x, const FourierFunction& f) {
  const Matrix& X = t.value(x);
  require(X.cols() == f.dim(), "fourier_eval: dim mismatch");
  Matrix v = f.eval_rows(X);
  if (!t.needs_grad(x)) return t.emplace(std::move(v), false, nullptr);
  const FourierFunction* fp = &f;
  const Var out{t.size()};
  t.emplace(std::move(v), true, [x, fp, out](Tape& tt) {
    const Matrix& g = tt.adjoint(out);
    const Matrix& X_ = tt.value(x);
    Matrix gx(X_.rows(), X_.cols());
    for (Eigen::Index i = 0; i < X_.rows(); ++i) {
      gx.row(i) = g(i, 0) * fp->gradient(X_.row(i)).transpose();
    }
    tt.accumulate(x, gx);
  });
  return out;
}

Var sech_mean_eval(Tape& t, Var x, const SechMeanParams& m) {
  const Matrix& X = t.value(x);
  Matrix v(X.rows(), 1);
  for (Eigen::Index i = 0; i < X.rows(); ++i) v(i, 0) = m(X.row(i));
  if (!t.needs_grad(x)) return t.emplace(std::move(v), false, nullptr);
  const SechMeanParams* mp = &m;
  const Var out{t.size()};
  t.emplace(std::move(v), true, [x, mp, out](Tape& tt) {
    const Matrix& g = tt.adjoint(out);
    const Matrix& X_ = tt.value(x);
    Matrix gx(X_.rows(), X_.cols());
    for (Eigen::Index i = 0; i < X_.rows(); ++i) {
      gx.row(i) = g(i, 0) * mp->gradient(X_.row(i)).transpose();
    }
    tt.accumulate(x, gx);
  });
  return out;
}

}  // namespace asal::tape
