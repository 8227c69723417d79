#include "asal/problems.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <utility>
#include <vector>

namespace asal::problems {

namespace {

constexpr double kPi = std::numbers::pi;

void check_input(const BenchmarkProblem& p, const Eigen::VectorXd& x) {
  if (x.size() != p.dimension) {
    throw std::invalid_argument(p.name + ": input dimension mismatch");
  }
  for (int j = 0; j < x.size(); ++j) {
    if (!(x[j] >= 0.0 && x[j] <= 1.0)) {
      throw std::invalid_argument(p.name +
                                  ": input outside the unit hypercube");
    }
  }
}

// Frozen Monte-Carlo normalization constants, generated once by
// compute_normalization(problem, kNormalizationSeed, kNormalizationSamples)
// and embedded so downstream results are reproducible bit for bit.
constexpr double kBraninMean = 54.420259990630491;
constexpr double kBraninStd = 51.196114061877608;
constexpr double kSimionescuMean = -7.1515149586702016e-05;
constexpr double kSimionescuStd = 0.052184754024014804;
constexpr double kSimionescuQStd = 0.6740892678325936;
constexpr double kTownsendMean = -0.47384341437564492;
constexpr double kTownsendStd = 1.0268622319922192;
constexpr double kTownsendQStd = 2.256685543434628;

}  // namespace

double BenchmarkProblem::f(const Eigen::VectorXd& x) const {
  check_input(*this, x);
  return (raw_f(x) - norm.f_mean) / norm.f_std;
}

double BenchmarkProblem::q(const Eigen::VectorXd& x) const {
  if (!raw_q) {
    throw std::logic_error(name + ": problem has no constraint");
  }
  check_input(*this, x);
  return raw_q(x) / norm.q_std;
}

Eigen::MatrixXd BenchmarkProblem::sample_test_inputs(Rng& rng) const {
  Eigen::MatrixXd out(test_count, dimension);
  Eigen::VectorXd x(dimension);
  for (int i = 0; i < test_count; ++i) {
    int attempts = 0;
    for (;;) {
      for (int j = 0; j < dimension; ++j) x[j] = rng.uniform();
      if (!raw_q || raw_q(x) >= 0.0) break;
      if (++attempts >= 100000) {
        throw std::runtime_error(name + ": no safe test point found");
      }
    }
    out.row(i) = x.transpose();
  }
  return out;
}

double piecewise_angle(double x1, double x2) {
  if (x2 > 0.0) return std::atan(x1 / x2);
  if (x2 < 0.0) {
    const double sign = x1 >= 0.0 ? 1.0 : -1.0;  // sign(0) = 1
    return std::atan(x1 / x2) + sign * kPi;
  }
  if (x1 != 0.0) return (x1 > 0.0 ? 0.5 : -0.5) * kPi;
  return 0.0;
}

double branin_native(double x1, double x2) {
  const double a = 1.0;
  const double b = 5.1 / (4.0 * kPi * kPi);
  const double c = 5.0 / kPi;
  const double r = 6.0;
  const double s = 10.0;
  const double t = 1.0 / (8.0 * kPi);
  const double quad = x2 - b * x1 * x1 + c * x1 - r;
  return a * quad * quad + s * (1.0 - t) * std::cos(x1) + s;
}

double simionescu_f_native(double x1, double x2) { return 0.1 * x1 * x2; }

double simionescu_q_native(double x1, double x2) {
  const double bracket = 1.0 + 0.2 * std::cos(8.0 * piecewise_angle(x1, x2));
  return bracket * bracket - x1 * x1 - x2 * x2;
}

double townsend_f_native(double x1, double x2) {
  const double c = std::cos((x1 - 0.1) * x2);
  return -c * c - x1 * std::sin(3.0 * x1 + x2);
}

double townsend_q_native(double x1, double x2) {
  const double b = piecewise_angle(x1, x2);
  const double outer = 2.0 * std::cos(b) - 0.5 * std::cos(2.0 * b) -
                       0.25 * std::cos(3.0 * b) - 0.125 * std::cos(4.0 * b);
  const double s = 2.0 * std::sin(b);
  return outer * outer + s * s - x1 * x1 - x2 * x2;
}

BenchmarkProblem make_sin() {
  BenchmarkProblem p;
  p.name = "sin";
  p.dimension = 1;
  p.test_count = 50;
  p.raw_f = [](const Eigen::VectorXd& x) { return std::sin(20.0 * x[0]); };
  return p;
}

BenchmarkProblem make_branin() {
  BenchmarkProblem p;
  p.name = "branin";
  p.dimension = 2;
  p.test_count = 200;
  p.norm.f_mean = kBraninMean;
  p.norm.f_std = kBraninStd;
  p.raw_f = [](const Eigen::VectorXd& x) {
    return branin_native(-5.0 + 15.0 * x[0], 15.0 * x[1]);
  };
  return p;
}

BenchmarkProblem make_simionescu() {
  BenchmarkProblem p;
  p.name = "simionescu";
  p.dimension = 2;
  p.test_count = 200;
  p.seed_lo = 0.4;
  p.seed_hi = 0.6;
  p.norm.f_mean = kSimionescuMean;
  p.norm.f_std = kSimionescuStd;
  p.norm.q_std = kSimionescuQStd;
  p.raw_f = [](const Eigen::VectorXd& x) {
    return simionescu_f_native(-1.25 + 2.5 * x[0], -1.25 + 2.5 * x[1]);
  };
  p.raw_q = [](const Eigen::VectorXd& x) {
    return simionescu_q_native(-1.25 + 2.5 * x[0], -1.25 + 2.5 * x[1]);
  };
  return p;
}

BenchmarkProblem make_townsend() {
  BenchmarkProblem p;
  p.name = "townsend";
  p.dimension = 2;
  p.test_count = 200;
  p.seed_lo = 0.4;
  p.seed_hi = 0.6;
  p.norm.f_mean = kTownsendMean;
  p.norm.f_std = kTownsendStd;
  p.norm.q_std = kTownsendQStd;
  p.raw_f = [](const Eigen::VectorXd& x) {
    return townsend_f_native(-2.25 + 4.5 * x[0], -2.5 + 4.25 * x[1]);
  };
  p.raw_q = [](const Eigen::VectorXd& x) {
    return townsend_q_native(-2.25 + 4.5 * x[0], -2.5 + 4.25 * x[1]);
  };
  return p;
}

BenchmarkProblem make_problem(std::string_view name) {
  if (name == "sin") return make_sin();
  if (name == "branin") return make_branin();
  if (name == "simionescu") return make_simionescu();
  if (name == "townsend") return make_townsend();
  throw std::invalid_argument("unknown benchmark problem: " +
                              std::string(name));
}

NormalizationConstants compute_normalization(const BenchmarkProblem& problem,
                                             std::uint64_t seed, int n) {
  if (n < 2) throw std::invalid_argument("normalization: n must be >= 2");
  Rng rng(seed);
  Eigen::VectorXd x(problem.dimension);
  double sum = 0.0, sumsq = 0.0, qsum = 0.0, qsumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < problem.dimension; ++j) x[j] = rng.uniform();
    const double v = problem.raw_f(x);
    sum += v;
    sumsq += v * v;
    if (problem.raw_q) {
      const double w = problem.raw_q(x);
      qsum += w;
      qsumsq += w * w;
    }
  }
  NormalizationConstants nc;
  nc.f_mean = sum / n;
  nc.f_std = std::sqrt(sumsq / n - nc.f_mean * nc.f_mean);
  if (problem.raw_q) {
    const double qmean = qsum / n;
    nc.q_std = std::sqrt(qsumsq / n - qmean * qmean);
  }
  return nc;
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

double parse_field(const std::string& field, int line_no) {
  double value = 0.0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end) {
    throw std::invalid_argument("pool csv: malformed number at line " +
                                std::to_string(line_no));
  }
  return value;
}

}  // namespace

Pool parse_pool_csv(const std::string& path, int dimension, bool has_safety) {
  if (dimension < 1) {
    throw std::invalid_argument("pool csv: dimension must be >= 1");
  }
  std::ifstream in(path);
  if (!in) throw std::runtime_error("pool csv: cannot open " + path);

  std::string expected;
  for (int j = 1; j <= dimension; ++j) expected += "x" + std::to_string(j) + ",";
  expected += "y";
  if (has_safety) expected += ",z";

  std::string line;
  if (!std::getline(in, line)) {
    throw std::invalid_argument("pool csv: empty file " + path);
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != expected) {
    throw std::invalid_argument("pool csv: header must be `" + expected +
                                "`, got `" + line + "`");
  }

  const int arity = dimension + 1 + (has_safety ? 1 : 0);
  std::vector<Eigen::VectorXd> xs;
  std::vector<double> ys, zs;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_fields(line);
    if (static_cast<int>(fields.size()) != arity) {
      throw std::invalid_argument(
          "pool csv: expected " + std::to_string(arity) + " fields at line " +
          std::to_string(line_no) + ", got " + std::to_string(fields.size()));
    }
    Eigen::VectorXd x(dimension);
    for (int j = 0; j < dimension; ++j) {
      x[j] = parse_field(fields[static_cast<std::size_t>(j)], line_no);
      if (!(x[j] >= 0.0 && x[j] <= 1.0)) {
        throw std::invalid_argument(
            "pool csv: input outside [0,1] at line " + std::to_string(line_no));
      }
    }
    xs.push_back(std::move(x));
    ys.push_back(parse_field(fields[static_cast<std::size_t>(dimension)],
                             line_no));
    if (has_safety) {
      zs.push_back(parse_field(fields[static_cast<std::size_t>(dimension + 1)],
                               line_no));
    }
  }
  if (xs.empty()) {
    throw std::invalid_argument("pool csv: no data rows in " + path);
  }

  Pool pool;
  pool.dimension = dimension;
  pool.has_safety = has_safety;
  const int n = static_cast<int>(xs.size());
  pool.data.inputs.resize(n, dimension);
  pool.data.outputs.resize(n);
  if (has_safety) pool.data.safety = Eigen::VectorXd(n);
  for (int i = 0; i < n; ++i) {
    pool.data.inputs.row(i) = xs[static_cast<std::size_t>(i)].transpose();
    pool.data.outputs[i] = ys[static_cast<std::size_t>(i)];
    if (has_safety) (*pool.data.safety)[i] = zs[static_cast<std::size_t>(i)];
  }
  return pool;
}

std::optional<int> registry_test_count(std::string_view name) {
  if (name == "airline") return 50;
  if (name == "lgbb") return 200;
  if (name == "airfoil") return 500;
  if (name == "engine") return 200;
  return std::nullopt;
}

namespace {

Dataset gather_rows(const Dataset& data, const std::vector<int>& rows) {
  Dataset out;
  out.inputs.resize(static_cast<int>(rows.size()), data.dim());
  out.outputs.resize(static_cast<int>(rows.size()));
  if (data.safety) out.safety = Eigen::VectorXd(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const int r = rows[i];
    out.inputs.row(static_cast<int>(i)) = data.inputs.row(r);
    out.outputs[static_cast<int>(i)] = data.outputs[r];
    if (data.safety) (*out.safety)[static_cast<int>(i)] = (*data.safety)[r];
  }
  return out;
}

}  // namespace

PoolSplit split_pool(Rng& rng, const Pool& pool, int test_count, int n_init,
                     double seed_lo, double seed_hi) {
  if (test_count < 1 || n_init < 1) {
    throw std::invalid_argument("pool split: counts must be positive");
  }
  const Dataset& data = pool.data;
  const int n = data.size();
  if (test_count + n_init > n) {
    throw std::invalid_argument("pool split: dataset too small");
  }

  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  for (int i = n - 1; i >= 1; --i) {
    const int j = static_cast<int>(
        rng.integer(static_cast<std::uint64_t>(i) + 1));
    std::swap(perm[static_cast<std::size_t>(i)],
              perm[static_cast<std::size_t>(j)]);
  }

  const auto safe = [&](int r) {
    return !pool.has_safety || (*data.safety)[r] >= 0.0;
  };
  const auto central = [&](int r) {
    if (!pool.has_safety) return true;
    return data.inputs.row(r).minCoeff() >= seed_lo &&
           data.inputs.row(r).maxCoeff() <= seed_hi;
  };

  std::vector<int> test_rows, init_rows, pool_rows;
  for (const int r : perm) {
    if (static_cast<int>(test_rows.size()) < test_count && safe(r)) {
      test_rows.push_back(r);
    } else if (static_cast<int>(init_rows.size()) < n_init && safe(r) &&
               central(r)) {
      init_rows.push_back(r);
    } else {
      pool_rows.push_back(r);
    }
  }
  if (static_cast<int>(test_rows.size()) < test_count) {
    throw std::invalid_argument(
        "pool split: only " + std::to_string(test_rows.size()) + " of " +
        std::to_string(test_count) + " eligible test rows");
  }
  if (static_cast<int>(init_rows.size()) < n_init) {
    throw std::invalid_argument(
        "pool split: only " + std::to_string(init_rows.size()) + " of " +
        std::to_string(n_init) + " eligible initial rows");
  }

  PoolSplit split;
  split.test = gather_rows(data, test_rows);
  split.initial = gather_rows(data, init_rows);
  split.pool = gather_rows(data, pool_rows);
  return split;
}

}  // namespace asal::problems
