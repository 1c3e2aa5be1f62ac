#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "l2l/gac.hpp"
#include "l2l/lstm.hpp"
#include "l2l/numerics.hpp"
#include "l2l/preprocess.hpp"

namespace l2l {

// Weights of the coordinatewise two-layer LSTM update rule, shared by every
// coordinate it is applied to. The update for coordinate k is
//   g_k = output_scale * (output_weights . h2_k + output_bias).
// output_scale and the input encoding are metadata and are not trained.
struct LstmOptimizerParams {
  LstmLayerParams layer1;
  LstmLayerParams layer2;
  Vector output_weights;
  double output_bias = 0.0;

  double output_scale = 1.0;
  InputMode input_mode = InputMode::kRaw;
  double input_scale = 1.0;      // raw mode only
  double preprocess_p = kDefaultPreprocessP;
  std::size_t extra_inputs = 0;  // additional channels after the gradient encoding

  std::size_t n_hidden() const { return layer1.n_hidden(); }
  std::size_t input_width() const;
  std::size_t parameter_count() const;
  void validate() const;

  // Trainable weights in a fixed order: layer1 (input, hidden, bias),
  // layer2 (same), output weights, output bias.
  Vector to_flat() const;
  void assign_flat(const Vector& flat);

  // Same shapes and metadata, all weights zero.
  LstmOptimizerParams zeros_like() const;
};

struct InitOptions {
  std::size_t n_hidden = 20;
  InputMode input_mode = InputMode::kRaw;
  double scale_std = 0.1;
  double forget_bias = 1.0;
  double output_scale = 1.0;
  double input_scale = 1.0;
  double preprocess_p = kDefaultPreprocessP;
  std::size_t extra_inputs = 0;
};

// Gaussian weights (std scale_std), zero biases except the forget gate
// (forget_bias), zero output projection.
LstmOptimizerParams init_optimizer_params(RngStream& rng, const InitOptions& options = {});

// Recurrent state of every coordinate, one column per coordinate.
struct CoordinateStateBank {
  ColMatrix h1, c1, h2, c2;

  static CoordinateStateBank zeros(std::size_t n_coords, std::size_t n_hidden);
  std::size_t size() const { return static_cast<std::size_t>(h1.cols()); }
  // Column k of the result is column perm[k] of this bank.
  CoordinateStateBank gather(const std::vector<std::size_t>& perm) const;
  bool operator==(const CoordinateStateBank& other) const;
};

// Input channels for each coordinate (input_width x n).
ColMatrix encode_inputs(const LstmOptimizerParams& phi, const Vector& grad);

// Per-step record of a stack forward pass.
struct StackTape {
  LayerTape layer1;
  LayerTape layer2;
  ColMatrix h2_out;  // top-layer output after averaging
};

// Runs both layers for all coordinates, with global averaging cells when gac
// is given.
void advance_layers(const LstmOptimizerParams& phi, const ColMatrix& inputs,
                    CoordinateStateBank& bank, const GacSpec* gac, StackTape* tape);

// output_scale * (w . h2_k + b) per column.
Vector project_output(const LstmOptimizerParams& phi, const ColMatrix& h2);

// Adjoints of the recurrent state, as flowing backward between steps.
struct StackAdjoint {
  ColMatrix dh1, dc1, dh2, dc2;
  static StackAdjoint zeros(std::size_t n_coords, std::size_t n_hidden);
};

// Backpropagates one taped step. d_update is the adjoint of this step's
// update vector; carry holds adjoints of the step's output state on entry
// and of its input state on return. Gradient inputs are treated as
// constants.
void backward_step(const LstmOptimizerParams& phi, const StackTape& tape, const Vector& d_update,
                   const GacSpec* gac, StackAdjoint& carry, LstmOptimizerParams& grads);

// g_t for every coordinate; advances bank in place.
Vector optimizer_step(const LstmOptimizerParams& phi, const Vector& grad,
                      CoordinateStateBank& bank);

// ---------------------------------------------------------------------------

struct ParameterGroup {
  std::string name;
  std::vector<std::size_t> indices;
};

// Partition of [0, dim) into named groups, each driven by its own
// LstmOptimizerParams.
struct ParameterGroupSpec {
  std::size_t dim = 0;
  std::vector<ParameterGroup> groups;

  static ParameterGroupSpec single(std::size_t dim, std::string name = "all");
  // Group g holds the coordinates whose kind label equals names[g].
  static ParameterGroupSpec from_kinds(const std::vector<std::string>& kinds,
                                       const std::vector<std::string>& names);
  // Throws ContractViolation on overlapping, missing or out-of-range indices.
  void validate() const;
};

std::vector<CoordinateStateBank> zero_banks(const ParameterGroupSpec& groups,
                                            const std::vector<LstmOptimizerParams>& params);

Vector grouped_optimizer_step(const ParameterGroupSpec& groups,
                              const std::vector<LstmOptimizerParams>& params, const Vector& grad,
                              std::vector<CoordinateStateBank>& banks);

}  // namespace l2l
