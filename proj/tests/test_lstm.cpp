#include <cmath>
#include <functional>

#include "doctest.h"
#include "l2l/lstm.hpp"
#include "oracles.hpp"

using namespace l2l;

namespace {

double uniform_in(RngStream& rng, double lo, double hi) { return lo + (hi - lo) * rng.uniform(); }

LstmLayerParams random_layer(RngStream& rng, std::size_t in, std::size_t hidden, double std = 0.5) {
  LstmLayerParams p = LstmLayerParams::zeros(in, hidden);
  for (Eigen::Index i = 0; i < p.input_weights.size(); ++i) p.input_weights.data()[i] = std * rng.gaussian();
  for (Eigen::Index i = 0; i < p.hidden_weights.size(); ++i) p.hidden_weights.data()[i] = std * rng.gaussian();
  for (Eigen::Index i = 0; i < p.bias.size(); ++i) p.bias[i] = std * rng.gaussian();
  return p;
}

double sigm(double z) { return 1 / (1 + std::exp(-z)); }

// Scalar objective a.h' + b.c' over one cell step.
struct Objective {
  Vector a, b;
  double operator()(const LstmLayerParams& p, const Vector& x, const Vector& h, const Vector& c) const {
    const LstmCellState s = lstm_cell_forward(p, x, h, c);
    return a.dot(s.h) + b.dot(s.c);
  }
};

// Central differences of f over the entries of v.
Vector fd(const std::function<double()>& f, double* v, Eigen::Index n, double eps = 1e-6) {
  Vector out(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double saved = v[i];
    v[i] = saved + eps;
    const double up = f();
    v[i] = saved - eps;
    const double down = f();
    v[i] = saved;
    out[i] = (up - down) / (2 * eps);
  }
  return out;
}

void check_close(const Vector& analytic, const Vector& numeric) {
  CHECK(relative_error(analytic, numeric) <= 1e-6);
}

}  // namespace

TEST_SUITE("lstm") {

TEST_CASE("zero parameters and zero state stay at zero") {
  const LstmLayerParams p = LstmLayerParams::zeros(3, 4);
  const LstmCellState s = lstm_cell_forward(p, Vector::Constant(3, 7.0), Vector::Zero(4), Vector::Zero(4));
  CHECK(s.h.isZero(0));
  CHECK(s.c.isZero(0));
}

TEST_CASE("zero parameters halve the cell") {
  const LstmLayerParams p = LstmLayerParams::zeros(1, 1);
  const LstmCellState s = lstm_cell_forward(p, Vector::Zero(1), Vector::Zero(1), Vector::Constant(1, 2.0));
  CHECK(s.c[0] == 1.0);
  CHECK(s.h[0] == doctest::Approx(0.380797).epsilon(1e-6));
  CHECK(s.h[0] == 0.5 * std::tanh(1.0));
}

TEST_CASE("one-unit cell matches a hand evaluation") {
  RngStream rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const LstmLayerParams p = random_layer(rng, 1, 1, 1.0);
    const double x = rng.gaussian(), h = rng.gaussian(), c = rng.gaussian();
    const auto pre = [&](int gate) {
      return p.input_weights(gate, 0) * x + p.hidden_weights(gate, 0) * h + p.bias[gate];
    };
    const double i = sigm(pre(0)), f = sigm(pre(1)), o = sigm(pre(2)), g = std::tanh(pre(3));
    const double c_next = f * c + i * g;
    const double h_next = o * std::tanh(c_next);
    const LstmCellState s =
        lstm_cell_forward(p, Vector::Constant(1, x), Vector::Constant(1, h), Vector::Constant(1, c));
    CHECK(std::abs(s.c[0] - c_next) <= 1e-12);
    CHECK(std::abs(s.h[0] - h_next) <= 1e-12);
  }
}

TEST_CASE("wider cells match the long double oracle") {
  RngStream rng(22);
  const LstmLayerParams p = random_layer(rng, 2, 5);
  const Vector x = sample_gaussian_vector(rng, 2), h = sample_gaussian_vector(rng, 5),
               c = sample_gaussian_vector(rng, 5);
  const auto wx = oracle::widen(Eigen::Map<const Vector>(p.input_weights.data(), p.input_weights.size()));
  const auto wh = oracle::widen(Eigen::Map<const Vector>(p.hidden_weights.data(), p.hidden_weights.size()));
  const auto b = oracle::widen(p.bias);
  auto xr = oracle::widen(x), hr = oracle::widen(h), cr = oracle::widen(c);
  oracle::lstm_cell(wx.data(), wh.data(), b.data(), 2, 5, xr.data(), hr.data(), cr.data());
  const LstmCellState s = lstm_cell_forward(p, x, h, c);
  for (Eigen::Index u = 0; u < 5; ++u) {
    CHECK(std::abs(s.h[u] - static_cast<double>(hr[static_cast<std::size_t>(u)])) <= 1e-14);
    CHECK(std::abs(s.c[u] - static_cast<double>(cr[static_cast<std::size_t>(u)])) <= 1e-14);
  }
}

TEST_CASE("cell backward matches finite differences on every input and weight") {
  RngStream rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t in = 1 + static_cast<std::size_t>(trial % 2), hidden = 3;
    LstmLayerParams p = random_layer(rng, in, hidden);
    Vector x = sample_gaussian_vector(rng, in), h = sample_gaussian_vector(rng, hidden),
           c = sample_gaussian_vector(rng, hidden);
    const Objective obj{sample_gaussian_vector(rng, hidden), sample_gaussian_vector(rng, hidden)};
    const LstmCellGradients grads = lstm_cell_backward(p, x, h, c, obj.a, obj.b);
    const auto f = [&] { return obj(p, x, h, c); };
    check_close(grads.dx, fd(f, x.data(), x.size()));
    check_close(grads.dh, fd(f, h.data(), h.size()));
    check_close(grads.dc, fd(f, c.data(), c.size()));
    const Vector dwx = Eigen::Map<const Vector>(grads.params.input_weights.data(), grads.params.input_weights.size());
    const Vector dwh = Eigen::Map<const Vector>(grads.params.hidden_weights.data(), grads.params.hidden_weights.size());
    check_close(dwx, fd(f, p.input_weights.data(), p.input_weights.size()));
    check_close(dwh, fd(f, p.hidden_weights.data(), p.hidden_weights.size()));
    check_close(grads.params.bias, fd(f, p.bias.data(), p.bias.size()));
  }
}

TEST_CASE("layer passes agree with per-column cell passes") {
  RngStream rng(24);
  const std::size_t in = 2, hidden = 4, n = 5;
  const LstmLayerParams p = random_layer(rng, in, hidden);
  const ColMatrix x = sample_gaussian(rng, in, n), h0 = sample_gaussian(rng, hidden, n),
                  c0 = sample_gaussian(rng, hidden, n);
  ColMatrix h = h0, c = c0;
  LayerTape tape;
  lstm_layer_forward(p, x, h, c, &tape);
  const ColMatrix dh = sample_gaussian(rng, hidden, n), dc = sample_gaussian(rng, hidden, n);
  LstmLayerParams grads = LstmLayerParams::zeros(in, hidden);
  ColMatrix dx, dh_prev, dc_prev;
  lstm_layer_backward(p, tape, dh, dc, grads, dx, dh_prev, dc_prev);

  LstmLayerParams sum = LstmLayerParams::zeros(in, hidden);
  for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(n); ++k) {
    const LstmCellState s = lstm_cell_forward(p, x.col(k), h0.col(k), c0.col(k));
    CHECK((s.h.array() == h.col(k).array()).all());
    CHECK((s.c.array() == c.col(k).array()).all());
    const LstmCellGradients g = lstm_cell_backward(p, x.col(k), h0.col(k), c0.col(k), dh.col(k), dc.col(k));
    CHECK(relative_error(g.dx, dx.col(k)) <= 1e-14);
    CHECK(relative_error(g.dh, dh_prev.col(k)) <= 1e-14);
    CHECK(relative_error(g.dc, dc_prev.col(k)) <= 1e-14);
    sum.input_weights += g.params.input_weights;
    sum.hidden_weights += g.params.hidden_weights;
    sum.bias += g.params.bias;
  }
  CHECK((sum.input_weights - grads.input_weights).norm() <= 1e-12 * (1 + sum.input_weights.norm()));
  CHECK((sum.hidden_weights - grads.hidden_weights).norm() <= 1e-12 * (1 + sum.hidden_weights.norm()));
  CHECK((sum.bias - grads.bias).norm() <= 1e-12 * (1 + sum.bias.norm()));
}

TEST_CASE("states stay bounded over long runs with bounded inputs") {
  RngStream rng(25);
  const std::size_t hidden = 6;
  LstmLayerParams p = random_layer(rng, 1, hidden, 2.0);
  p.bias.segment(kForgetGate * hidden, hidden).setConstant(10.0);
  Vector h = Vector::Zero(hidden), c = Vector::Zero(hidden);
  for (int t = 1; t <= 1000; ++t) {
    const LstmCellState s = lstm_cell_forward(p, Vector::Constant(1, uniform_in(rng, -1.0, 1.0)), h, c);
    h = s.h;
    c = s.c;
    REQUIRE(h.allFinite());
    REQUIRE(c.allFinite());
    CHECK(c.lpNorm<Eigen::Infinity>() <= t);
    CHECK(h.lpNorm<Eigen::Infinity>() <= 1.0);
  }
}

TEST_CASE("shape validation") {
  CHECK_THROWS_AS(LstmLayerParams::zeros(0, 3), ContractViolation);
  LstmLayerParams p = LstmLayerParams::zeros(2, 3);
  CHECK(p.parameter_count() == 12 * 2 + 12 * 3 + 12);
  p.bias.resize(5);
  CHECK_THROWS_AS(p.validate(), ContractViolation);
  const LstmLayerParams q = LstmLayerParams::zeros(2, 3);
  CHECK_THROWS_AS(lstm_cell_forward(q, Vector::Zero(3), Vector::Zero(3), Vector::Zero(3)), ContractViolation);
}

}
