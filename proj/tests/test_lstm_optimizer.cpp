#include <algorithm>
#include <numeric>

#include "doctest.h"
#include "l2l/lstm_optimizer.hpp"

using namespace l2l;

namespace {

LstmOptimizerParams random_phi(RngStream& rng, InputMode mode, std::size_t hidden = 5,
                               double std = 0.5) {
  InitOptions o;
  o.n_hidden = hidden;
  o.input_mode = mode;
  LstmOptimizerParams phi = init_optimizer_params(rng, o);
  phi.assign_flat(sample_gaussian_vector(rng, phi.parameter_count(), std));
  return phi;
}

std::vector<std::size_t> random_permutation(RngStream& rng, std::size_t n) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.uniform_int(i)]);
  return perm;
}

Vector permute(const Vector& v, const std::vector<std::size_t>& perm) {
  Vector out(v.size());
  for (std::size_t k = 0; k < perm.size(); ++k) out[static_cast<Eigen::Index>(k)] = v[static_cast<Eigen::Index>(perm[k])];
  return out;
}

bool same_bits(const Vector& a, const Vector& b) { return a.size() == b.size() && (a.array() == b.array()).all(); }

}  // namespace

TEST_SUITE("lstm_optimizer") {

TEST_CASE("zero weights propose zero updates") {
  RngStream rng(31);
  LstmOptimizerParams phi = random_phi(rng, InputMode::kRaw).zeros_like();
  CoordinateStateBank bank = CoordinateStateBank::zeros(7, phi.n_hidden());
  const Vector theta = sample_gaussian_vector(rng, 7);
  for (int t = 0; t < 5; ++t) {
    const Vector g = optimizer_step(phi, sample_gaussian_vector(rng, 7), bank);
    CHECK(g.isZero(0));
    CHECK(same_bits(theta + g, theta));
  }
}

TEST_CASE("fresh initialisation proposes zero updates") {
  RngStream rng(32);
  InitOptions o;
  o.input_mode = InputMode::kPreprocessed;
  const LstmOptimizerParams phi = init_optimizer_params(rng, o);
  CoordinateStateBank bank = CoordinateStateBank::zeros(4, phi.n_hidden());
  CHECK(optimizer_step(phi, sample_gaussian_vector(rng, 4), bank).isZero(0));
}

TEST_CASE("initialisation shapes and determinism") {
  InitOptions o;
  o.n_hidden = 20;
  o.input_mode = InputMode::kPreprocessed;
  o.forget_bias = 1.5;
  RngStream a(33), b(33);
  const LstmOptimizerParams p = init_optimizer_params(a, o), q = init_optimizer_params(b, o);
  CHECK(same_bits(p.to_flat(), q.to_flat()));
  CHECK(p.layer1.input_weights.rows() == 80);
  CHECK(p.layer1.input_weights.cols() == 2);
  for (int gate = 0; gate < 4; ++gate)
    CHECK(p.layer1.input_weights.middleRows(gate * 20, 20).rows() == 20);
  CHECK(p.layer2.input_weights.cols() == 20);
  CHECK(p.output_weights.isZero(0));
  CHECK(p.output_bias == 0.0);
  CHECK((p.layer1.bias.segment(kForgetGate * 20, 20).array() == 1.5).all());
  CHECK((p.layer2.bias.segment(kForgetGate * 20, 20).array() == 1.5).all());
  CHECK(p.layer1.bias.segment(kInputGate * 20, 20).isZero(0));
  CHECK(p.input_width() == 2);
  CHECK_THROWS_AS(
      [] {
        InitOptions bad;
        bad.n_hidden = 0;
        RngStream r(1);
        init_optimizer_params(r, bad);
      }(),
      ContractViolation);
}

TEST_CASE("steps are bitwise permutation equivariant") {
  RngStream rng(34);
  for (auto mode : {InputMode::kRaw, InputMode::kPreprocessed}) {
    const LstmOptimizerParams phi = random_phi(rng, mode);
    for (int replay = 0; replay < 100; ++replay) {
      const std::size_t n = 3 + rng.uniform_int(10);
      CoordinateStateBank bank = CoordinateStateBank::zeros(n, phi.n_hidden());
      for (int warm = 0; warm < 3; ++warm) optimizer_step(phi, sample_gaussian_vector(rng, n), bank);
      const auto perm = random_permutation(rng, n);
      const Vector grad = sample_gaussian_vector(rng, n);
      CoordinateStateBank permuted = bank.gather(perm);
      const Vector g = optimizer_step(phi, grad, bank);
      const Vector gp = optimizer_step(phi, permute(grad, perm), permuted);
      REQUIRE(same_bits(gp, permute(g, perm)));
      REQUIRE(permuted == bank.gather(perm));
    }
  }
}

TEST_CASE("a coordinate's update depends only on its own gradient history") {
  RngStream rng(35);
  const LstmOptimizerParams phi = random_phi(rng, InputMode::kPreprocessed);
  CoordinateStateBank a = CoordinateStateBank::zeros(6, phi.n_hidden()), b = a;
  for (int t = 0; t < 10; ++t) {
    Vector ga = sample_gaussian_vector(rng, 6), gb = sample_gaussian_vector(rng, 6);
    gb[2] = ga[2];
    const Vector ua = optimizer_step(phi, ga, a), ub = optimizer_step(phi, gb, b);
    CHECK(ua[2] == ub[2]);
  }
}

TEST_CASE("equal histories give equal updates") {
  RngStream rng(36);
  const LstmOptimizerParams phi = random_phi(rng, InputMode::kRaw);
  CoordinateStateBank bank = CoordinateStateBank::zeros(3, phi.n_hidden());
  for (int t = 0; t < 10; ++t) {
    Vector g = sample_gaussian_vector(rng, 3);
    g[1] = g[0];
    const Vector u = optimizer_step(phi, g, bank);
    CHECK(u[0] == u[1]);
  }
}

TEST_CASE("grouped steps") {
  RngStream rng(37);
  const std::size_t n = 8;
  const LstmOptimizerParams phi = random_phi(rng, InputMode::kRaw);
  std::vector<Vector> grads;
  for (int t = 0; t < 6; ++t) grads.push_back(sample_gaussian_vector(rng, n));

  SUBCASE("single group equals the plain step") {
    const ParameterGroupSpec spec = ParameterGroupSpec::single(n);
    std::vector<LstmOptimizerParams> params{phi};
    auto banks = zero_banks(spec, params);
    CoordinateStateBank bank = CoordinateStateBank::zeros(n, phi.n_hidden());
    for (const auto& g : grads)
      CHECK(same_bits(grouped_optimizer_step(spec, params, g, banks), optimizer_step(phi, g, bank)));
  }

  ParameterGroupSpec two;
  two.dim = n;
  two.groups = {{"a", {0, 2, 4, 6}}, {"b", {1, 3, 5, 7}}};

  SUBCASE("two identical groups equal one group") {
    std::vector<LstmOptimizerParams> params{phi, phi};
    auto banks = zero_banks(two, params);
    CoordinateStateBank bank = CoordinateStateBank::zeros(n, phi.n_hidden());
    for (const auto& g : grads)
      CHECK(same_bits(grouped_optimizer_step(two, params, g, banks), optimizer_step(phi, g, bank)));
  }

  SUBCASE("groups are independent") {
    const LstmOptimizerParams other = random_phi(rng, InputMode::kRaw);
    std::vector<LstmOptimizerParams> p1{phi, other}, p2{phi.zeros_like(), other};
    auto b1 = zero_banks(two, p1), b2 = zero_banks(two, p2);
    for (const auto& g : grads) {
      const Vector u1 = grouped_optimizer_step(two, p1, g, b1);
      const Vector u2 = grouped_optimizer_step(two, p2, g, b2);
      for (std::size_t k : two.groups[1].indices)
        CHECK(u1[static_cast<Eigen::Index>(k)] == u2[static_cast<Eigen::Index>(k)]);
      for (std::size_t k : two.groups[0].indices) CHECK(u2[static_cast<Eigen::Index>(k)] == 0.0);
    }
  }
}

TEST_CASE("partitions are validated") {
  ParameterGroupSpec overlap;
  overlap.dim = 3;
  overlap.groups = {{"a", {0, 1}}, {"b", {1, 2}}};
  CHECK_THROWS_AS(overlap.validate(), ContractViolation);
  ParameterGroupSpec missing;
  missing.dim = 3;
  missing.groups = {{"a", {0, 2}}};
  CHECK_THROWS_AS(missing.validate(), ContractViolation);
  ParameterGroupSpec range;
  range.dim = 2;
  range.groups = {{"a", {0, 1, 2}}};
  CHECK_THROWS_AS(range.validate(), ContractViolation);
  CHECK_NOTHROW(ParameterGroupSpec::single(4).validate());

  const auto spec = ParameterGroupSpec::from_kinds({"weight", "bias", "weight"}, {"weight", "bias"});
  CHECK(spec.groups[0].indices == std::vector<std::size_t>{0, 2});
  CHECK(spec.groups[1].indices == std::vector<std::size_t>{1});
  CHECK_THROWS_AS(ParameterGroupSpec::from_kinds({"weight", "bias"}, {"weight"}), ContractViolation);
}

TEST_CASE("flat weights round-trip in the documented order") {
  RngStream rng(38);
  LstmOptimizerParams phi = random_phi(rng, InputMode::kPreprocessed, 3);
  const Vector flat = phi.to_flat();
  CHECK(static_cast<std::size_t>(flat.size()) == phi.parameter_count());
  CHECK(flat[0] == phi.layer1.input_weights(0, 0));
  CHECK(flat[1] == phi.layer1.input_weights(0, 1));
  CHECK(flat[flat.size() - 1] == phi.output_bias);
  CHECK(flat[flat.size() - 2] == phi.output_weights[2]);
  LstmOptimizerParams copy = phi.zeros_like();
  copy.assign_flat(flat);
  CHECK(same_bits(copy.to_flat(), flat));
  CHECK_THROWS_AS(copy.assign_flat(Vector::Zero(3)), ContractViolation);
}

TEST_CASE("output scale multiplies the projection") {
  RngStream rng(39);
  LstmOptimizerParams phi = random_phi(rng, InputMode::kRaw);
  LstmOptimizerParams scaled = phi;
  scaled.output_scale = 0.1;
  CoordinateStateBank a = CoordinateStateBank::zeros(4, phi.n_hidden()), b = a;
  const Vector g = sample_gaussian_vector(rng, 4);
  CHECK(relative_error(optimizer_step(scaled, g, b), 0.1 * optimizer_step(phi, g, a)) < 1e-15);
}

}
