#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace l2l {

// Dense double-precision containers used throughout. Matrices are stored
// row-major so that a flat dump of the entries matches the reading order.
using Vector = Eigen::VectorXd;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Raised when a caller breaks an operation's precondition (dimension
// mismatch, invalid size, malformed partition).
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Raised when an optimization produces a non-finite loss or update.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised by finite_diff_grad when f is not finite at one of the probes.
class NonFiniteProbe : public std::runtime_error {
 public:
  NonFiniteProbe(std::size_t coordinate, double step);
  std::size_t coordinate() const { return coordinate_; }

 private:
  std::size_t coordinate_;
};

/// Splittable pseudo-random stream.
///
/// The algorithm is xoshiro256** seeded through splitmix64; substreams are
/// derived by hashing (seed, index) so that every problem instance or
/// minibatch stream can own an independent, reproducible generator.
/// Gaussians use the Box-Muller transform with a cached spare value. The
/// whole construction is versioned by kAlgorithm; changing any of it must
/// bump the version string.
class RngStream {
 public:
  static constexpr const char* kAlgorithm = "xoshiro256ss-splitmix64-boxmuller-v1";

  explicit RngStream(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }

  // Independent generator for the index-th child of this stream. Does not
  // advance this stream.
  RngStream substream(std::uint64_t index) const;

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  // Unbiased integer in [0, bound). bound must be positive.
  std::uint64_t uniform_int(std::uint64_t bound);
  double gaussian();
  // exp(uniform(log lo, log hi)).
  double log_uniform(double lo, double hi);

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// rows x cols matrix of IID standard normal draws, filled in row-major order.
Matrix sample_gaussian(RngStream& rng, std::size_t rows, std::size_t cols);
Vector sample_gaussian_vector(RngStream& rng, std::size_t dim, double stddev = 1.0);

using ScalarFunction = std::function<double(const Vector&)>;

// Central-difference gradient of f at x.
Vector finite_diff_grad(const ScalarFunction& f, const Vector& x, double eps);

// ||a - b|| / max(||a||, ||b||), and 0 when both are zero.
double relative_error(const Vector& a, const Vector& b);

bool all_finite(const Vector& v);

}  // namespace l2l
