#pragma once

#include <cstddef>
#include <deque>
#include <utility>
#include <vector>

#include "l2l/gac.hpp"
#include "l2l/lstm_optimizer.hpp"
#include "l2l/numerics.hpp"

namespace l2l {

// Matrix memory shared by all coordinates. Dense mode stores M explicitly;
// history mode keeps M = base_scale * I + sum_j a_j b_j^T over a sliding
// window of at most history_len (a, b) pairs.
class ExternalMemory {
 public:
  static ExternalMemory dense(std::size_t n, double base_scale = 0.0);
  static ExternalMemory history(std::size_t n, std::size_t history_len, double base_scale = 0.0);

  bool is_dense() const { return dense_; }
  std::size_t dim() const { return n_; }
  std::size_t history_len() const { return history_len_; }
  double base_scale() const { return base_scale_; }
  const std::deque<std::pair<Vector, Vector>>& pairs() const { return pairs_; }

  // M as a dense matrix in either mode.
  Matrix to_dense() const;

  friend Vector ntm_read(const ExternalMemory& memory, const Vector& read_vector);
  friend void ntm_write(ExternalMemory& memory, const std::vector<Vector>& left,
                        const std::vector<Vector>& right);

 private:
  bool dense_ = true;
  std::size_t n_ = 0;
  std::size_t history_len_ = 0;
  double base_scale_ = 0.0;
  Matrix m_;
  std::deque<std::pair<Vector, Vector>> pairs_;
};

// i = M r
Vector ntm_read(const ExternalMemory& memory, const Vector& read_vector);

// M += sum_h left[h] right[h]^T; history mode appends the pairs and evicts
// the oldest beyond history_len.
void ntm_write(ExternalMemory& memory, const std::vector<Vector>& left,
               const std::vector<Vector>& right);

// Per-coordinate head components gathered into n-vectors.
struct HeadOutputs {
  std::vector<Vector> read;         // one per read head
  std::vector<Vector> read_gate;    // pre-sigmoid gate on each read result
  std::vector<Vector> write_left;   // one per write head
  std::vector<Vector> write_right;  // one per write head
};

struct NtmConfig {
  std::size_t read_heads = 1;
  std::size_t write_heads = 3;
  double memory_init = 0.0;      // M_0 = memory_init * I
  std::size_t history_len = 10;  // history mode only
};

// Coordinatewise head projection from the controller's top hidden layer.
// Rows: read vectors (R), read gates (R), left writes (W), right writes (W).
struct NtmHeadParams {
  Matrix weights;  // (2R + 2W) x H
  Vector bias;

  static NtmHeadParams zeros(const NtmConfig& config, std::size_t n_hidden);
  std::size_t rows() const { return static_cast<std::size_t>(weights.rows()); }
};

// Controller: coordinatewise LSTM (its layer1 takes read_heads extra input
// channels carrying the previous read results), optional averaging cells,
// head projection, and the controller's own output projection.
struct NtmController {
  LstmOptimizerParams lstm;
  GacSpec gac;
  NtmConfig config;
  NtmHeadParams heads;

  void validate() const;
};

struct NtmState {
  CoordinateStateBank bank;
  ExternalMemory memory;
  ColMatrix read_feedback;  // R x n, read results of the previous step
};

NtmState ntm_initial_state(const NtmController& controller, std::size_t n, bool history_mode);

HeadOutputs compute_heads(const NtmController& controller, const ColMatrix& h2);

// One step of the external-memory optimizer:
//   controller consumes (encoded grad, previous read results),
//   i_j = M_t r_j for every read head,
//   g_k = output_scale * (w . h2_k + b + sum_j sigmoid(gate_jk) i_jk),
//   M_{t+1} = M_t + sum_h a_h b_h^T.
Vector ntm_bfgs_step(const NtmController& controller, const Vector& grad, NtmState& state);

}  // namespace l2l
