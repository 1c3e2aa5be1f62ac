#include "l2l/lstm.hpp"

#include <cmath>
#include <string>

namespace l2l {
namespace {

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

LstmLayerParams LstmLayerParams::zeros(std::size_t in_dim, std::size_t n_hidden) {
  if (in_dim == 0 || n_hidden == 0) throw ContractViolation("LstmLayerParams: sizes must be >= 1");
  const auto rows = static_cast<Eigen::Index>(4 * n_hidden);
  LstmLayerParams p;
  p.input_weights = Matrix::Zero(rows, static_cast<Eigen::Index>(in_dim));
  p.hidden_weights = Matrix::Zero(rows, static_cast<Eigen::Index>(n_hidden));
  p.bias = Vector::Zero(rows);
  return p;
}

std::size_t LstmLayerParams::parameter_count() const {
  return static_cast<std::size_t>(input_weights.size() + hidden_weights.size() + bias.size());
}

void LstmLayerParams::validate() const {
  const Eigen::Index h = hidden_weights.cols();
  if (h == 0 || hidden_weights.rows() != 4 * h || input_weights.rows() != 4 * h ||
      bias.size() != 4 * h || input_weights.cols() == 0)
    throw ContractViolation("LstmLayerParams: inconsistent block shapes");
  if (!input_weights.allFinite() || !hidden_weights.allFinite() || !bias.allFinite())
    throw ContractViolation("LstmLayerParams: non-finite weights");
}

void LstmLayerParams::set_zero() {
  input_weights.setZero();
  hidden_weights.setZero();
  bias.setZero();
}

void lstm_cell_kernel(const LstmLayerParams& p, const double* x, const double* h,
                      const double* c, double* gates, double* h_out, double* c_out) {
  const Eigen::Index nh = p.hidden_weights.cols();
  const Eigen::Index ni = p.input_weights.cols();
  for (Eigen::Index r = 0; r < 4 * nh; ++r) {
    double z = p.bias[r];
    const double* wx = p.input_weights.data() + r * ni;
    for (Eigen::Index j = 0; j < ni; ++j) z += wx[j] * x[j];
    const double* wh = p.hidden_weights.data() + r * nh;
    for (Eigen::Index j = 0; j < nh; ++j) z += wh[j] * h[j];
    gates[r] = r < kCandidate * nh ? sigmoid(z) : std::tanh(z);
  }
  for (Eigen::Index u = 0; u < nh; ++u) {
    const double i = gates[kInputGate * nh + u];
    const double f = gates[kForgetGate * nh + u];
    const double o = gates[kOutputGate * nh + u];
    const double g = gates[kCandidate * nh + u];
    const double cn = f * c[u] + i * g;
    c_out[u] = cn;
    h_out[u] = o * std::tanh(cn);
  }
}

void lstm_layer_forward(const LstmLayerParams& p, const ColMatrix& x, ColMatrix& h, ColMatrix& c,
                        LayerTape* tape) {
  const Eigen::Index nh = p.hidden_weights.cols();
  const Eigen::Index n = x.cols();
  if (x.rows() != p.input_weights.cols() || h.rows() != nh || c.rows() != nh || h.cols() != n ||
      c.cols() != n)
    throw ContractViolation("lstm_layer_forward: dimension mismatch");

  ColMatrix gates(4 * nh, n);
  if (tape != nullptr) {
    tape->x = x;
    tape->h_prev = h;
    tape->c_prev = c;
  }
  Vector h_next(nh);
  Vector c_next(nh);
  for (Eigen::Index k = 0; k < n; ++k) {
    lstm_cell_kernel(p, x.col(k).data(), h.col(k).data(), c.col(k).data(), gates.col(k).data(),
                     h_next.data(), c_next.data());
    h.col(k) = h_next;
    c.col(k) = c_next;
  }
  if (tape != nullptr) {
    tape->gates = std::move(gates);
    tape->c = c;
  }
}

void lstm_layer_backward(const LstmLayerParams& p, const LayerTape& tape, const ColMatrix& dh,
                         const ColMatrix& dc, LstmLayerParams& grads, ColMatrix& dx,
                         ColMatrix& dh_prev, ColMatrix& dc_prev) {
  const Eigen::Index nh = p.hidden_weights.cols();
  const Eigen::Index n = tape.c.cols();
  const auto i = tape.gates.middleRows(kInputGate * nh, nh).array();
  const auto f = tape.gates.middleRows(kForgetGate * nh, nh).array();
  const auto o = tape.gates.middleRows(kOutputGate * nh, nh).array();
  const auto g = tape.gates.middleRows(kCandidate * nh, nh).array();
  const Eigen::ArrayXXd tanh_c = tape.c.array().tanh();

  const Eigen::ArrayXXd dc_total = dc.array() + dh.array() * o * (1.0 - tanh_c.square());
  ColMatrix dz(4 * nh, n);
  dz.middleRows(kInputGate * nh, nh) = (dc_total * g * i * (1.0 - i)).matrix();
  dz.middleRows(kForgetGate * nh, nh) = (dc_total * tape.c_prev.array() * f * (1.0 - f)).matrix();
  dz.middleRows(kOutputGate * nh, nh) = (dh.array() * tanh_c * o * (1.0 - o)).matrix();
  dz.middleRows(kCandidate * nh, nh) = (dc_total * i * (1.0 - g.square())).matrix();

  grads.input_weights.noalias() += dz * tape.x.transpose();
  grads.hidden_weights.noalias() += dz * tape.h_prev.transpose();
  grads.bias += dz.rowwise().sum();
  dx.noalias() = p.input_weights.transpose() * dz;
  dh_prev.noalias() = p.hidden_weights.transpose() * dz;
  dc_prev = (dc_total * f).matrix();
}

LstmCellState lstm_cell_forward(const LstmLayerParams& p, const Vector& x, const Vector& h,
                                const Vector& c) {
  const auto nh = static_cast<Eigen::Index>(p.n_hidden());
  if (static_cast<std::size_t>(x.size()) != p.in_dim() || h.size() != nh || c.size() != nh)
    throw ContractViolation("lstm_cell_forward: dimension mismatch");
  Vector gates(4 * nh);
  LstmCellState out{Vector(nh), Vector(nh)};
  lstm_cell_kernel(p, x.data(), h.data(), c.data(), gates.data(), out.h.data(), out.c.data());
  return out;
}

LstmCellGradients lstm_cell_backward(const LstmLayerParams& p, const Vector& x, const Vector& h,
                                     const Vector& c, const Vector& dh_out, const Vector& dc_out) {
  ColMatrix hm = h;
  ColMatrix cm = c;
  LayerTape tape;
  lstm_layer_forward(p, ColMatrix(x), hm, cm, &tape);
  LstmCellGradients out;
  out.params = LstmLayerParams::zeros(p.in_dim(), p.n_hidden());
  ColMatrix dx, dh, dc;
  lstm_layer_backward(p, tape, ColMatrix(dh_out), ColMatrix(dc_out), out.params, dx, dh, dc);
  out.dx = dx.col(0);
  out.dh = dh.col(0);
  out.dc = dc.col(0);
  return out;
}

}  // namespace l2l
