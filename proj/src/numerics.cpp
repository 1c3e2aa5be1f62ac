#include "l2l/numerics.hpp"

#include <cmath>
#include <numbers>

namespace l2l {
namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

NonFiniteProbe::NonFiniteProbe(std::size_t coordinate, double step)
    : std::runtime_error("finite_diff_grad: non-finite objective at coordinate " +
                         std::to_string(coordinate) + " (probe offset " + std::to_string(step) +
                         ")"),
      coordinate_(coordinate) {}

RngStream::RngStream(std::uint64_t seed) : seed_(seed) {
  std::uint64_t sm = seed;
  for (auto& word : s_) word = splitmix64(sm);
}

RngStream RngStream::substream(std::uint64_t index) const {
  std::uint64_t sm = seed_ ^ 0x5851f42d4c957f2dULL;
  std::uint64_t a = splitmix64(sm);
  sm = a ^ (index * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL);
  return RngStream(splitmix64(sm));
}

std::uint64_t RngStream::next_u64() {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double RngStream::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t RngStream::uniform_int(std::uint64_t bound) {
  if (bound == 0) throw ContractViolation("uniform_int: bound must be positive");
  // Lemire's multiply-shift with rejection.
  std::uint64_t x = next_u64();
  __uint128_t m = static_cast<__uint128_t>(x) * bound;
  auto low = static_cast<std::uint64_t>(m);
  if (low < bound) {
    const std::uint64_t threshold = (0 - bound) % bound;
    while (low < threshold) {
      x = next_u64();
      m = static_cast<__uint128_t>(x) * bound;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

double RngStream::gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

double RngStream::log_uniform(double lo, double hi) {
  if (!(lo > 0.0) || !(hi >= lo)) throw ContractViolation("log_uniform: need 0 < lo <= hi");
  const double a = std::log(lo);
  const double b = std::log(hi);
  return std::exp(a + (b - a) * uniform());
}

Matrix sample_gaussian(RngStream& rng, std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) throw ContractViolation("sample_gaussian: rows and cols must be >= 1");
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rng.gaussian();
  return m;
}

Vector sample_gaussian_vector(RngStream& rng, std::size_t dim, double stddev) {
  Vector v(static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = stddev * rng.gaussian();
  return v;
}

Vector finite_diff_grad(const ScalarFunction& f, const Vector& x, double eps) {
  if (!(eps > 0.0)) throw ContractViolation("finite_diff_grad: eps must be positive");
  Vector grad(x.size());
  Vector probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    const double plus = f(probe);
    if (!std::isfinite(plus)) throw NonFiniteProbe(static_cast<std::size_t>(i), eps);
    probe[i] = x[i] - eps;
    const double minus = f(probe);
    if (!std::isfinite(minus)) throw NonFiniteProbe(static_cast<std::size_t>(i), -eps);
    probe[i] = x[i];
    grad[i] = (plus - minus) / (2.0 * eps);
  }
  return grad;
}

double relative_error(const Vector& a, const Vector& b) {
  const double scale = std::max(a.norm(), b.norm());
  if (scale == 0.0) return 0.0;
  return (a - b).norm() / scale;
}

bool all_finite(const Vector& v) { return v.allFinite(); }

}  // namespace l2l
