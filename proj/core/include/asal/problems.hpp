#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>

#include "asal/dataset.hpp"
#include "asal/rng.hpp"

namespace asal::problems {

// Output scaling estimated once from noise-free samples. Objectives are
// centered to zero mean and unit variance; constraints are divided by their
// standard deviation only, so the feasible set is unchanged.
struct NormalizationConstants {
  double f_mean = 0.0;
  double f_std = 1.0;
  double q_std = 1.0;
};

// Analytic benchmark over the unit hypercube. Evaluations accept unit
// coordinates only; the native box lives inside raw_f / raw_q.
struct BenchmarkProblem {
  std::string name;
  int dimension = 1;
  double noise_std_f = 0.1;
  double noise_std_q = 0.1;
  int test_count = 50;
  // Axis-aligned box, in unit coordinates, that initial data are drawn from.
  double seed_lo = 0.0;
  double seed_hi = 1.0;
  NormalizationConstants norm;
  // Unnormalized values; raw_q is empty for unconstrained problems.
  std::function<double(const Eigen::VectorXd&)> raw_f;
  std::function<double(const Eigen::VectorXd&)> raw_q;

  bool constrained() const { return static_cast<bool>(raw_q); }
  double f(const Eigen::VectorXd& x) const;
  double q(const Eigen::VectorXd& x) const;
  // Uniform test inputs; constrained problems keep only points whose true
  // constraint value is nonnegative.
  Eigen::MatrixXd sample_test_inputs(Rng& rng) const;
};

// Angle b with tan(b) = x1/x2 and branch values in (-pi, pi], taking
// sign(0) = 1 on the x2 < 0 branch and b = 0 at the origin.
double piecewise_angle(double x1, double x2);

// Native-coordinate formulas, before domain mapping and normalization.
double branin_native(double x1, double x2);
double simionescu_f_native(double x1, double x2);
double simionescu_q_native(double x1, double x2);
double townsend_f_native(double x1, double x2);
double townsend_q_native(double x1, double x2);

BenchmarkProblem make_sin();
BenchmarkProblem make_branin();
BenchmarkProblem make_simionescu();
BenchmarkProblem make_townsend();
// Lookup by name: sin, branin, simionescu, townsend.
BenchmarkProblem make_problem(std::string_view name);

// Seed and count behind the frozen constants in the factories. Regenerate
// with compute_normalization(problem, kNormalizationSeed,
// kNormalizationSamples); a unit test asserts the embedded values match.
inline constexpr std::uint64_t kNormalizationSeed = 0x6e6f726d;  // "norm"
inline constexpr int kNormalizationSamples = 100000;

// Draws n points uniformly in the unit cube from Rng(seed), one coordinate
// at a time, and returns the population mean / standard deviation of raw_f
// and the population standard deviation of raw_q.
NormalizationConstants compute_normalization(const BenchmarkProblem& problem,
                                             std::uint64_t seed, int n);

// Fixed dataset parsed from CSV with header x1,...,xD,y[,z].
struct Pool {
  int dimension = 1;
  bool has_safety = false;
  Dataset data;
};

// Strict parse: the header must match the expected schema exactly, every row
// must have the right arity and numeric fields, and inputs must lie in
// [0,1]^D. Errors name the offending 1-based line.
Pool parse_pool_csv(const std::string& path, int dimension, bool has_safety);

// Test-set sizes used by the experiment protocol for the known datasets.
std::optional<int> registry_test_count(std::string_view name);

struct PoolSplit {
  Dataset test;
  Dataset initial;
  Dataset pool;
};

// Seeded split into test points, initial data, and the query pool. With
// safety, test rows require z >= 0 and initial rows additionally lie in the
// central seed box; rows failing eligibility stay in the pool.
PoolSplit split_pool(Rng& rng, const Pool& pool, int test_count, int n_init,
                     double seed_lo = 0.4, double seed_hi = 0.6);

}  // namespace asal::problems
