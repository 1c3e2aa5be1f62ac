#pragma once

#include <cstddef>

#include "l2l/numerics.hpp"

namespace l2l {

// Column-major matrix whose columns are per-coordinate vectors.
using ColMatrix = Eigen::MatrixXd;

// Gate blocks inside the stacked 4H pre-activations.
enum Gate : int { kInputGate = 0, kForgetGate = 1, kOutputGate = 2, kCandidate = 3 };

// Forget-gate LSTM layer without peepholes:
//   i = sigm(Wx_i x + Wh_i h + b_i)   f, o likewise
//   g = tanh(Wx_g x + Wh_g h + b_g)
//   c' = f * c + i * g,  h' = o * tanh(c')
struct LstmLayerParams {
  Matrix input_weights;   // 4H x in
  Matrix hidden_weights;  // 4H x H
  Vector bias;            // 4H

  static LstmLayerParams zeros(std::size_t in_dim, std::size_t n_hidden);

  std::size_t in_dim() const { return static_cast<std::size_t>(input_weights.cols()); }
  std::size_t n_hidden() const { return static_cast<std::size_t>(hidden_weights.cols()); }
  std::size_t parameter_count() const;
  void validate() const;
  void set_zero();
};

// Everything the backward pass needs from one forward step of a layer,
// one column per coordinate.
struct LayerTape {
  ColMatrix x;       // in x n
  ColMatrix h_prev;  // H x n
  ColMatrix c_prev;  // H x n
  ColMatrix gates;   // 4H x n, post-activation
  ColMatrix c;       // H x n
};

// Single-coordinate kernel. Accumulates in a fixed loop order so that the
// result for a coordinate does not depend on where its column lives in
// memory. gates receives 4H activated values.
void lstm_cell_kernel(const LstmLayerParams& p, const double* x, const double* h,
                      const double* c, double* gates, double* h_out, double* c_out);

// Advances every column of (h, c) by one step on inputs x. Records the step
// into tape when given.
void lstm_layer_forward(const LstmLayerParams& p, const ColMatrix& x, ColMatrix& h, ColMatrix& c,
                        LayerTape* tape);

// Reverse of lstm_layer_forward. dh and dc are adjoints of the layer's new
// (h, c); on return dx, dh_prev, dc_prev hold adjoints of its inputs.
// Parameter adjoints are added into grads.
void lstm_layer_backward(const LstmLayerParams& p, const LayerTape& tape, const ColMatrix& dh,
                         const ColMatrix& dc, LstmLayerParams& grads, ColMatrix& dx,
                         ColMatrix& dh_prev, ColMatrix& dc_prev);

struct LstmCellState {
  Vector h;
  Vector c;
};

LstmCellState lstm_cell_forward(const LstmLayerParams& p, const Vector& x, const Vector& h,
                                const Vector& c);

struct LstmCellGradients {
  LstmLayerParams params;
  Vector dx;
  Vector dh;
  Vector dc;
};

// Adjoints of a single cell step given adjoints of its outputs (h', c').
LstmCellGradients lstm_cell_backward(const LstmLayerParams& p, const Vector& x, const Vector& h,
                                     const Vector& c, const Vector& dh_out, const Vector& dc_out);

}  // namespace l2l
