#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "l2l/numerics.hpp"

namespace l2l {

// ---------------------------------------------------------------------------
// Random quadratics f(theta) = ||W theta - y||^2.

struct QuadraticInstance {
  Matrix w;
  Vector y;

  std::size_t dim() const { return static_cast<std::size_t>(y.size()); }
};

QuadraticInstance quad_sample(std::size_t dim, RngStream& rng);
double quad_eval(const QuadraticInstance& inst, const Vector& theta);
// 2 W^T (W theta - y)
Vector quad_grad(const QuadraticInstance& inst, const Vector& theta);

// ---------------------------------------------------------------------------
// Classification data and small MLP optimizees.

struct Dataset {
  Matrix features;           // n_examples x n_features, values in [0, 1]
  std::vector<int> labels;   // one per feature row
  int n_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t n_features() const { return static_cast<std::size_t>(features.cols()); }
};

enum class IdxErrorKind { kOpen, kWrongMagic, kTruncated, kCountMismatch };

class IdxError : public std::runtime_error {
 public:
  IdxError(IdxErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  IdxErrorKind kind() const { return kind_; }

 private:
  IdxErrorKind kind_;
};

// Reads an IDX image/label pair (magic 0x00000803 / 0x00000801). Pixels are
// scaled by 1/255. max_examples == 0 loads everything. n_classes == 0 infers
// max(label) + 1.
Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 std::size_t max_examples = 0, int n_classes = 0);

// Class-conditional Gaussian blobs. Class means are drawn from N(0, I) and
// redrawn until every pair is at least one unit apart; samples add noise of
// std 0.5 and each feature is min-max rescaled into [0, 1]. Labels are
// assigned round robin, so every class is present, then shuffled.
Dataset synthetic_dataset(std::size_t n_examples, std::size_t n_features, int n_classes,
                          RngStream& rng);

enum class Activation { kSigmoid, kRelu };

struct MlpArchitecture {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_layer_sizes;
  std::size_t n_classes = 0;
  Activation activation = Activation::kSigmoid;

  void validate() const;
};

enum class TensorKind { kWeight, kBias };

// Location of one parameter tensor inside the flat parameter vector.
struct TensorSlot {
  std::string name;
  TensorKind kind;
  std::size_t rows;
  std::size_t cols;
  std::size_t offset;

  std::size_t size() const { return rows * cols; }
};

using ShapeMap = std::vector<TensorSlot>;

// Layout: for each layer l, weight "W<l>" (out x in, row-major) followed by
// bias "b<l>" (out).
ShapeMap build_shape_map(const MlpArchitecture& arch);
std::size_t parameter_count(const ShapeMap& map);

using Minibatch = std::vector<std::size_t>;

class MlpProblemInstance {
 public:
  MlpProblemInstance(MlpArchitecture arch, std::shared_ptr<const Dataset> data,
                     std::size_t minibatch_size, RngStream rng);

  const MlpArchitecture& architecture() const { return arch_; }
  const Dataset& dataset() const { return *data_; }
  const ShapeMap& shape_map() const { return shape_map_; }
  std::size_t minibatch_size() const { return minibatch_size_; }
  std::size_t parameter_count() const { return n_params_; }

  // Uniform sample without replacement of minibatch_size example indices.
  Minibatch next_minibatch();

 private:
  MlpArchitecture arch_;
  std::shared_ptr<const Dataset> data_;
  std::size_t minibatch_size_;
  RngStream rng_;
  ShapeMap shape_map_;
  std::size_t n_params_;
  std::vector<std::size_t> order_;
};

struct LossAndGrad {
  double loss;
  Vector grad;
};

// Mean softmax cross-entropy over the batch and its exact gradient.
// Throws DivergenceError when the loss is not finite.
LossAndGrad mlp_loss_and_grad(const MlpProblemInstance& inst, const Vector& theta,
                              const Minibatch& batch);

}  // namespace l2l
