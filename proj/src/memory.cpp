#include "l2l/memory.hpp"

#include <cmath>
#include <string>

namespace l2l {

ExternalMemory ExternalMemory::dense(std::size_t n, double base_scale) {
  if (n == 0) throw ContractViolation("ExternalMemory: dimension must be >= 1");
  ExternalMemory m;
  m.dense_ = true;
  m.n_ = n;
  m.base_scale_ = base_scale;
  const auto size = static_cast<Eigen::Index>(n);
  m.m_ = base_scale * Matrix::Identity(size, size);
  return m;
}

ExternalMemory ExternalMemory::history(std::size_t n, std::size_t history_len, double base_scale) {
  if (n == 0 || history_len == 0)
    throw ContractViolation("ExternalMemory: dimension and history length must be >= 1");
  ExternalMemory m;
  m.dense_ = false;
  m.n_ = n;
  m.history_len_ = history_len;
  m.base_scale_ = base_scale;
  return m;
}

Matrix ExternalMemory::to_dense() const {
  if (dense_) return m_;
  const auto size = static_cast<Eigen::Index>(n_);
  Matrix m = base_scale_ * Matrix::Identity(size, size);
  for (const auto& [a, b] : pairs_) m.noalias() += a * b.transpose();
  return m;
}

Vector ntm_read(const ExternalMemory& memory, const Vector& r) {
  if (static_cast<std::size_t>(r.size()) != memory.n_)
    throw ContractViolation("ntm_read: read vector has " + std::to_string(r.size()) +
                            " entries, memory is " + std::to_string(memory.n_));
  if (memory.dense_) return memory.m_ * r;
  Vector out = memory.base_scale_ * r;
  for (const auto& [a, b] : memory.pairs_) out += a * b.dot(r);
  return out;
}

void ntm_write(ExternalMemory& memory, const std::vector<Vector>& left,
               const std::vector<Vector>& right) {
  if (left.size() != right.size())
    throw ContractViolation("ntm_write: left and right write vectors must pair up");
  const auto n = static_cast<Eigen::Index>(memory.n_);
  for (std::size_t h = 0; h < left.size(); ++h)
    if (left[h].size() != n || right[h].size() != n)
      throw ContractViolation("ntm_write: write vector dimension mismatch");
  for (std::size_t h = 0; h < left.size(); ++h) {
    if (memory.dense_) {
      memory.m_.noalias() += left[h] * right[h].transpose();
    } else {
      memory.pairs_.emplace_back(left[h], right[h]);
      if (memory.pairs_.size() > memory.history_len_) memory.pairs_.pop_front();
    }
  }
}

// ---------------------------------------------------------------------------

NtmHeadParams NtmHeadParams::zeros(const NtmConfig& config, std::size_t n_hidden) {
  const auto rows = static_cast<Eigen::Index>(2 * config.read_heads + 2 * config.write_heads);
  return {Matrix::Zero(rows, static_cast<Eigen::Index>(n_hidden)), Vector::Zero(rows)};
}

void NtmController::validate() const {
  lstm.validate();
  gac.validate(lstm.n_hidden());
  if (lstm.extra_inputs != config.read_heads)
    throw ContractViolation("NtmController: controller needs one extra input per read head");
  const auto rows = static_cast<Eigen::Index>(2 * config.read_heads + 2 * config.write_heads);
  if (heads.weights.rows() != rows || heads.bias.size() != rows ||
      static_cast<std::size_t>(heads.weights.cols()) != lstm.n_hidden())
    throw ContractViolation("NtmController: head projection has the wrong shape");
}

NtmState ntm_initial_state(const NtmController& controller, std::size_t n, bool history_mode) {
  const auto& cfg = controller.config;
  return {CoordinateStateBank::zeros(n, controller.lstm.n_hidden()),
          history_mode ? ExternalMemory::history(n, cfg.history_len, cfg.memory_init)
                       : ExternalMemory::dense(n, cfg.memory_init),
          ColMatrix::Zero(static_cast<Eigen::Index>(cfg.read_heads), static_cast<Eigen::Index>(n))};
}

HeadOutputs compute_heads(const NtmController& controller, const ColMatrix& h2) {
  const auto& cfg = controller.config;
  const Eigen::Index n = h2.cols();
  const Eigen::Index nh = h2.rows();
  const auto rows = static_cast<Eigen::Index>(controller.heads.rows());
  ColMatrix out(rows, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const double* h = h2.col(k).data();
    for (Eigen::Index r = 0; r < rows; ++r) {
      const double* w = controller.heads.weights.data() + r * nh;
      double acc = controller.heads.bias[r];
      for (Eigen::Index u = 0; u < nh; ++u) acc += w[u] * h[u];
      out(r, k) = acc;
    }
  }
  HeadOutputs heads;
  Eigen::Index row = 0;
  auto take = [&](std::vector<Vector>& dst, std::size_t count) {
    for (std::size_t j = 0; j < count; ++j) dst.push_back(out.row(row++).transpose());
  };
  take(heads.read, cfg.read_heads);
  take(heads.read_gate, cfg.read_heads);
  take(heads.write_left, cfg.write_heads);
  take(heads.write_right, cfg.write_heads);
  return heads;
}

Vector ntm_bfgs_step(const NtmController& controller, const Vector& grad, NtmState& state) {
  const auto n = grad.size();
  if (static_cast<std::size_t>(n) != state.memory.dim() ||
      state.bank.size() != static_cast<std::size_t>(n))
    throw ContractViolation("ntm_bfgs_step: memory, bank and gradient dimensions must agree");
  const auto& cfg = controller.config;
  const auto base = static_cast<Eigen::Index>(channel_count(controller.lstm.input_mode));

  ColMatrix inputs = encode_inputs(controller.lstm, grad);
  inputs.middleRows(base, static_cast<Eigen::Index>(cfg.read_heads)) = state.read_feedback;
  const GacSpec* gac = controller.gac.empty() ? nullptr : &controller.gac;
  advance_layers(controller.lstm, inputs, state.bank, gac, nullptr);

  const HeadOutputs heads = compute_heads(controller, state.bank.h2);
  Vector update = project_output(controller.lstm, state.bank.h2);
  const double scale = controller.lstm.output_scale;
  for (std::size_t j = 0; j < cfg.read_heads; ++j) {
    const Vector read = ntm_read(state.memory, heads.read[j]);
    for (Eigen::Index k = 0; k < n; ++k) {
      const double gate = 1.0 / (1.0 + std::exp(-heads.read_gate[j][k]));
      update[k] += scale * gate * read[k];
    }
    state.read_feedback.row(static_cast<Eigen::Index>(j)) = read.transpose();
  }
  ntm_write(state.memory, heads.write_left, heads.write_right);
  return update;
}

}  // namespace l2l
