#include "l2l/lstm_optimizer.hpp"

#include <algorithm>
#include <string>

namespace l2l {

std::size_t LstmOptimizerParams::input_width() const {
  return static_cast<std::size_t>(channel_count(input_mode)) + extra_inputs;
}

std::size_t LstmOptimizerParams::parameter_count() const {
  return layer1.parameter_count() + layer2.parameter_count() +
         static_cast<std::size_t>(output_weights.size()) + 1;
}

void LstmOptimizerParams::validate() const {
  layer1.validate();
  layer2.validate();
  if (layer1.in_dim() != input_width())
    throw ContractViolation("LstmOptimizerParams: layer1 input width " +
                            std::to_string(layer1.in_dim()) + " does not match input encoding (" +
                            std::to_string(input_width()) + ")");
  if (layer2.in_dim() != layer1.n_hidden())
    throw ContractViolation("LstmOptimizerParams: layer2 input must equal layer1 hidden size");
  if (static_cast<std::size_t>(output_weights.size()) != layer2.n_hidden())
    throw ContractViolation("LstmOptimizerParams: output projection size mismatch");
  if (!output_weights.allFinite() || !std::isfinite(output_bias) || !std::isfinite(output_scale) ||
      !std::isfinite(input_scale))
    throw ContractViolation("LstmOptimizerParams: non-finite values");
  if (input_mode == InputMode::kPreprocessed && !(preprocess_p > 0.0))
    throw ContractViolation("LstmOptimizerParams: preprocess_p must be positive");
}

namespace {

template <typename Visitor>
void visit_blocks(LstmOptimizerParams& p, Visitor&& visit) {
  for (LstmLayerParams* layer : {&p.layer1, &p.layer2}) {
    visit(layer->input_weights.data(), layer->input_weights.size());
    visit(layer->hidden_weights.data(), layer->hidden_weights.size());
    visit(layer->bias.data(), layer->bias.size());
  }
  visit(p.output_weights.data(), p.output_weights.size());
  visit(&p.output_bias, Eigen::Index{1});
}

}  // namespace

Vector LstmOptimizerParams::to_flat() const {
  Vector flat(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index at = 0;
  visit_blocks(const_cast<LstmOptimizerParams&>(*this), [&](double* data, Eigen::Index size) {
    std::copy(data, data + size, flat.data() + at);
    at += size;
  });
  return flat;
}

void LstmOptimizerParams::assign_flat(const Vector& flat) {
  if (static_cast<std::size_t>(flat.size()) != parameter_count())
    throw ContractViolation("LstmOptimizerParams::assign_flat: size mismatch");
  Eigen::Index at = 0;
  visit_blocks(*this, [&](double* data, Eigen::Index size) {
    std::copy(flat.data() + at, flat.data() + at + size, data);
    at += size;
  });
}

LstmOptimizerParams LstmOptimizerParams::zeros_like() const {
  LstmOptimizerParams z = *this;
  z.layer1.set_zero();
  z.layer2.set_zero();
  z.output_weights.setZero();
  z.output_bias = 0.0;
  return z;
}

LstmOptimizerParams init_optimizer_params(RngStream& rng, const InitOptions& options) {
  if (options.n_hidden == 0) throw ContractViolation("init_optimizer_params: n_hidden must be >= 1");
  LstmOptimizerParams p;
  p.input_mode = options.input_mode;
  p.output_scale = options.output_scale;
  p.input_scale = options.input_scale;
  p.preprocess_p = options.preprocess_p;
  p.extra_inputs = options.extra_inputs;
  const std::size_t h = options.n_hidden;

  auto init_layer = [&](std::size_t in_dim) {
    LstmLayerParams layer = LstmLayerParams::zeros(in_dim, h);
    for (Matrix* w : {&layer.input_weights, &layer.hidden_weights})
      for (Eigen::Index r = 0; r < w->rows(); ++r)
        for (Eigen::Index c = 0; c < w->cols(); ++c) (*w)(r, c) = options.scale_std * rng.gaussian();
    layer.bias.segment(kForgetGate * static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(h))
        .setConstant(options.forget_bias);
    return layer;
  };
  p.layer1 = init_layer(p.input_width());
  p.layer2 = init_layer(h);
  p.output_weights = Vector::Zero(static_cast<Eigen::Index>(h));
  p.output_bias = 0.0;
  p.validate();
  return p;
}

// ---------------------------------------------------------------------------

CoordinateStateBank CoordinateStateBank::zeros(std::size_t n_coords, std::size_t n_hidden) {
  const auto h = static_cast<Eigen::Index>(n_hidden);
  const auto n = static_cast<Eigen::Index>(n_coords);
  return {ColMatrix::Zero(h, n), ColMatrix::Zero(h, n), ColMatrix::Zero(h, n),
          ColMatrix::Zero(h, n)};
}

CoordinateStateBank CoordinateStateBank::gather(const std::vector<std::size_t>& perm) const {
  CoordinateStateBank out;
  for (auto [dst, src] : {std::pair{&out.h1, &h1}, std::pair{&out.c1, &c1},
                          std::pair{&out.h2, &h2}, std::pair{&out.c2, &c2}}) {
    dst->resize(src->rows(), static_cast<Eigen::Index>(perm.size()));
    for (std::size_t k = 0; k < perm.size(); ++k)
      dst->col(static_cast<Eigen::Index>(k)) = src->col(static_cast<Eigen::Index>(perm[k]));
  }
  return out;
}

bool CoordinateStateBank::operator==(const CoordinateStateBank& o) const {
  auto same = [](const ColMatrix& a, const ColMatrix& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && (a.array() == b.array()).all();
  };
  return same(h1, o.h1) && same(c1, o.c1) && same(h2, o.h2) && same(c2, o.c2);
}

ColMatrix encode_inputs(const LstmOptimizerParams& phi, const Vector& grad) {
  const auto n = grad.size();
  ColMatrix inputs = ColMatrix::Zero(static_cast<Eigen::Index>(phi.input_width()), n);
  if (phi.input_mode == InputMode::kRaw) {
    inputs.row(0) = phi.input_scale * grad.transpose();
  } else {
    inputs.topRows(2) = preprocess_gradient(grad, phi.preprocess_p);
  }
  return inputs;
}

void advance_layers(const LstmOptimizerParams& phi, const ColMatrix& inputs,
                    CoordinateStateBank& bank, const GacSpec* gac, StackTape* tape) {
  lstm_layer_forward(phi.layer1, inputs, bank.h1, bank.c1, tape ? &tape->layer1 : nullptr);
  if (gac != nullptr) gac_average_inplace(bank.h1, gac->layer1_cells);
  lstm_layer_forward(phi.layer2, bank.h1, bank.h2, bank.c2, tape ? &tape->layer2 : nullptr);
  if (gac != nullptr) gac_average_inplace(bank.h2, gac->layer2_cells);
  if (tape != nullptr) tape->h2_out = bank.h2;
}

Vector project_output(const LstmOptimizerParams& phi, const ColMatrix& h2) {
  const Eigen::Index nh = h2.rows();
  Vector g(h2.cols());
  const double* w = phi.output_weights.data();
  for (Eigen::Index k = 0; k < h2.cols(); ++k) {
    const double* h = h2.col(k).data();
    double acc = phi.output_bias;
    for (Eigen::Index u = 0; u < nh; ++u) acc += w[u] * h[u];
    g[k] = phi.output_scale * acc;
  }
  return g;
}

StackAdjoint StackAdjoint::zeros(std::size_t n_coords, std::size_t n_hidden) {
  const auto h = static_cast<Eigen::Index>(n_hidden);
  const auto n = static_cast<Eigen::Index>(n_coords);
  return {ColMatrix::Zero(h, n), ColMatrix::Zero(h, n), ColMatrix::Zero(h, n),
          ColMatrix::Zero(h, n)};
}

void backward_step(const LstmOptimizerParams& phi, const StackTape& tape, const Vector& d_update,
                   const GacSpec* gac, StackAdjoint& carry, LstmOptimizerParams& grads) {
  const double s = phi.output_scale;
  grads.output_weights.noalias() += s * (tape.h2_out * d_update);
  grads.output_bias += s * d_update.sum();

  ColMatrix dh2 = carry.dh2;
  dh2.noalias() += s * phi.output_weights * d_update.transpose();
  if (gac != nullptr) gac_average_inplace(dh2, gac->layer2_cells);
  ColMatrix dx2, dh2_prev, dc2_prev;
  lstm_layer_backward(phi.layer2, tape.layer2, dh2, carry.dc2, grads.layer2, dx2, dh2_prev,
                      dc2_prev);

  ColMatrix dh1 = carry.dh1 + dx2;
  if (gac != nullptr) gac_average_inplace(dh1, gac->layer1_cells);
  ColMatrix dx1, dh1_prev, dc1_prev;
  lstm_layer_backward(phi.layer1, tape.layer1, dh1, carry.dc1, grads.layer1, dx1, dh1_prev,
                      dc1_prev);

  carry.dh1 = std::move(dh1_prev);
  carry.dc1 = std::move(dc1_prev);
  carry.dh2 = std::move(dh2_prev);
  carry.dc2 = std::move(dc2_prev);
}

Vector optimizer_step(const LstmOptimizerParams& phi, const Vector& grad,
                      CoordinateStateBank& bank) {
  if (bank.size() != static_cast<std::size_t>(grad.size()))
    throw ContractViolation("optimizer_step: bank has " + std::to_string(bank.size()) +
                            " coordinates, gradient has " + std::to_string(grad.size()));
  advance_layers(phi, encode_inputs(phi, grad), bank, nullptr, nullptr);
  return project_output(phi, bank.h2);
}

// ---------------------------------------------------------------------------

ParameterGroupSpec ParameterGroupSpec::single(std::size_t dim, std::string name) {
  ParameterGroupSpec spec;
  spec.dim = dim;
  ParameterGroup group{std::move(name), std::vector<std::size_t>(dim)};
  for (std::size_t i = 0; i < dim; ++i) group.indices[i] = i;
  spec.groups.push_back(std::move(group));
  return spec;
}

ParameterGroupSpec ParameterGroupSpec::from_kinds(const std::vector<std::string>& kinds,
                                                  const std::vector<std::string>& names) {
  ParameterGroupSpec spec;
  spec.dim = kinds.size();
  for (const auto& name : names) spec.groups.push_back({name, {}});
  for (std::size_t i = 0; i < kinds.size(); ++i) {
    auto it = std::find(names.begin(), names.end(), kinds[i]);
    if (it == names.end())
      throw ContractViolation("ParameterGroupSpec: coordinate " + std::to_string(i) + " of kind '" +
                              kinds[i] + "' is not covered by any group");
    spec.groups[static_cast<std::size_t>(it - names.begin())].indices.push_back(i);
  }
  spec.validate();
  return spec;
}

void ParameterGroupSpec::validate() const {
  std::vector<char> seen(dim, 0);
  for (const auto& group : groups) {
    for (auto i : group.indices) {
      if (i >= dim)
        throw ContractViolation("ParameterGroupSpec: index " + std::to_string(i) +
                                " out of range in group '" + group.name + "'");
      if (seen[i])
        throw ContractViolation("ParameterGroupSpec: index " + std::to_string(i) +
                                " assigned twice (group '" + group.name + "')");
      seen[i] = 1;
    }
  }
  for (std::size_t i = 0; i < dim; ++i)
    if (!seen[i])
      throw ContractViolation("ParameterGroupSpec: index " + std::to_string(i) +
                              " not assigned to any group");
}

std::vector<CoordinateStateBank> zero_banks(const ParameterGroupSpec& groups,
                                            const std::vector<LstmOptimizerParams>& params) {
  if (params.size() != groups.groups.size())
    throw ContractViolation("zero_banks: one parameter set per group required");
  std::vector<CoordinateStateBank> banks;
  for (std::size_t g = 0; g < params.size(); ++g)
    banks.push_back(
        CoordinateStateBank::zeros(groups.groups[g].indices.size(), params[g].n_hidden()));
  return banks;
}

Vector grouped_optimizer_step(const ParameterGroupSpec& groups,
                              const std::vector<LstmOptimizerParams>& params, const Vector& grad,
                              std::vector<CoordinateStateBank>& banks) {
  groups.validate();
  if (static_cast<std::size_t>(grad.size()) != groups.dim)
    throw ContractViolation("grouped_optimizer_step: gradient dimension mismatch");
  if (params.size() != groups.groups.size() || banks.size() != groups.groups.size())
    throw ContractViolation("grouped_optimizer_step: one parameter set and bank per group required");
  Vector update(grad.size());
  for (std::size_t g = 0; g < groups.groups.size(); ++g) {
    const auto& idx = groups.groups[g].indices;
    Vector local(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j)
      local[static_cast<Eigen::Index>(j)] = grad[static_cast<Eigen::Index>(idx[j])];
    const Vector out = optimizer_step(params[g], local, banks[g]);
    for (std::size_t j = 0; j < idx.size(); ++j)
      update[static_cast<Eigen::Index>(idx[j])] = out[static_cast<Eigen::Index>(j)];
  }
  return update;
}

}  // namespace l2l
