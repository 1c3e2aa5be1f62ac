#include "l2l/optimizee.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

namespace l2l {

QuadraticInstance quad_sample(std::size_t dim, RngStream& rng) {
  if (dim == 0) throw ContractViolation("quad_sample: dim must be >= 1");
  QuadraticInstance inst;
  inst.w = sample_gaussian(rng, dim, dim);
  inst.y = sample_gaussian_vector(rng, dim);
  return inst;
}

namespace {

void check_quad_dim(const QuadraticInstance& inst, const Vector& theta) {
  if (inst.w.rows() != inst.w.cols() || inst.w.rows() != inst.y.size())
    throw ContractViolation("quadratic: W must be square and match y");
  if (theta.size() != inst.y.size())
    throw ContractViolation("quadratic: theta has dim " + std::to_string(theta.size()) +
                            ", expected " + std::to_string(inst.y.size()));
}

}  // namespace

double quad_eval(const QuadraticInstance& inst, const Vector& theta) {
  check_quad_dim(inst, theta);
  return (inst.w * theta - inst.y).squaredNorm();
}

Vector quad_grad(const QuadraticInstance& inst, const Vector& theta) {
  check_quad_dim(inst, theta);
  return 2.0 * (inst.w.transpose() * (inst.w * theta - inst.y));
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
constexpr std::uint32_t kIdxImageMagic = 0x00000803;

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError(IdxErrorKind::kOpen, "cannot open IDX file: " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset,
                        const std::string& path) {
  if (offset + 4 > bytes.size())
    throw IdxError(IdxErrorKind::kTruncated, "truncated IDX header: " + path);
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

std::string hex32(std::uint32_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s = "0x";
  for (int shift = 28; shift >= 0; shift -= 4) s.push_back(digits[(v >> shift) & 0xf]);
  return s;
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 std::size_t max_examples, int n_classes) {
  const auto images = read_file(images_path);
  const auto labels = read_file(labels_path);

  const std::uint32_t image_magic = read_be32(images, 0, images_path);
  if (image_magic != kIdxImageMagic)
    throw IdxError(IdxErrorKind::kWrongMagic, "wrong magic " + hex32(image_magic) + " in " +
                                                  images_path + " (expected 0x00000803)");
  const std::uint32_t label_magic = read_be32(labels, 0, labels_path);
  if (label_magic != kIdxLabelMagic)
    throw IdxError(IdxErrorKind::kWrongMagic, "wrong magic " + hex32(label_magic) + " in " +
                                                  labels_path + " (expected 0x00000801)");

  const std::size_t n_images = read_be32(images, 4, images_path);
  const std::size_t rows = read_be32(images, 8, images_path);
  const std::size_t cols = read_be32(images, 12, images_path);
  const std::size_t n_labels = read_be32(labels, 4, labels_path);
  if (n_images != n_labels)
    throw IdxError(IdxErrorKind::kCountMismatch,
                   "count mismatch: " + std::to_string(n_images) + " images vs " +
                       std::to_string(n_labels) + " labels");

  const std::size_t pixels = rows * cols;
  constexpr std::size_t kImageHeader = 16;
  constexpr std::size_t kLabelHeader = 8;
  if (images.size() < kImageHeader + n_images * pixels)
    throw IdxError(IdxErrorKind::kTruncated, "truncated image payload: " + images_path);
  if (labels.size() < kLabelHeader + n_labels)
    throw IdxError(IdxErrorKind::kTruncated, "truncated label payload: " + labels_path);

  const std::size_t n = max_examples == 0 ? n_images : std::min(max_examples, n_images);
  Dataset ds;
  ds.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(pixels));
  ds.labels.resize(n);
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* px = images.data() + kImageHeader + i * pixels;
    for (std::size_t j = 0; j < pixels; ++j)
      ds.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = px[j] / 255.0;
    ds.labels[i] = labels[kLabelHeader + i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.n_classes = n_classes > 0 ? n_classes : max_label + 1;
  if (max_label >= ds.n_classes)
    throw ContractViolation("load_idx: label " + std::to_string(max_label) +
                            " exceeds n_classes " + std::to_string(ds.n_classes));
  return ds;
}

Dataset synthetic_dataset(std::size_t n_examples, std::size_t n_features, int n_classes,
                          RngStream& rng) {
  if (n_classes < 1 || n_features < 1 || n_examples < static_cast<std::size_t>(n_classes))
    throw ContractViolation("synthetic_dataset: need n_examples >= n_classes >= 1");
  const auto k = static_cast<std::size_t>(n_classes);

  Matrix means;
  for (int attempt = 0;; ++attempt) {
    means = sample_gaussian(rng, k, n_features);
    double closest = INFINITY;
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = a + 1; b < k; ++b)
        closest = std::min(closest, (means.row(static_cast<Eigen::Index>(a)) -
                                     means.row(static_cast<Eigen::Index>(b)))
                                        .norm());
    if (closest >= 1.0) break;
    if (attempt > 1000) throw ContractViolation("synthetic_dataset: cannot separate means");
  }

  std::vector<int> labels(n_examples);
  for (std::size_t i = 0; i < n_examples; ++i) labels[i] = static_cast<int>(i % k);
  for (std::size_t i = n_examples; i > 1; --i) std::swap(labels[i - 1], labels[rng.uniform_int(i)]);

  constexpr double kNoise = 0.5;
  Dataset ds;
  ds.n_classes = n_classes;
  ds.features.resize(static_cast<Eigen::Index>(n_examples), static_cast<Eigen::Index>(n_features));
  for (std::size_t i = 0; i < n_examples; ++i)
    for (std::size_t j = 0; j < n_features; ++j)
      ds.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          means(labels[i], static_cast<Eigen::Index>(j)) + kNoise * rng.gaussian();
  for (Eigen::Index j = 0; j < ds.features.cols(); ++j) {
    const double lo = ds.features.col(j).minCoeff();
    const double hi = ds.features.col(j).maxCoeff();
    const double span = hi > lo ? hi - lo : 1.0;
    ds.features.col(j) = (ds.features.col(j).array() - lo) / span;
  }
  ds.labels = std::move(labels);
  return ds;
}

// ---------------------------------------------------------------------------

void MlpArchitecture::validate() const {
  if (input_dim == 0 || n_classes == 0)
    throw ContractViolation("MlpArchitecture: input_dim and n_classes must be >= 1");
  for (auto h : hidden_layer_sizes)
    if (h == 0) throw ContractViolation("MlpArchitecture: hidden sizes must be >= 1");
}

ShapeMap build_shape_map(const MlpArchitecture& arch) {
  arch.validate();
  ShapeMap map;
  std::size_t offset = 0;
  std::size_t in = arch.input_dim;
  std::vector<std::size_t> outs = arch.hidden_layer_sizes;
  outs.push_back(arch.n_classes);
  for (std::size_t l = 0; l < outs.size(); ++l) {
    const std::size_t out = outs[l];
    map.push_back({"W" + std::to_string(l + 1), TensorKind::kWeight, out, in, offset});
    offset += out * in;
    map.push_back({"b" + std::to_string(l + 1), TensorKind::kBias, out, 1, offset});
    offset += out;
    in = out;
  }
  return map;
}

std::size_t parameter_count(const ShapeMap& map) {
  std::size_t n = 0;
  for (const auto& slot : map) n += slot.size();
  return n;
}

MlpProblemInstance::MlpProblemInstance(MlpArchitecture arch, std::shared_ptr<const Dataset> data,
                                       std::size_t minibatch_size, RngStream rng)
    : arch_(std::move(arch)),
      data_(std::move(data)),
      minibatch_size_(minibatch_size),
      rng_(rng),
      shape_map_(build_shape_map(arch_)),
      n_params_(l2l::parameter_count(shape_map_)) {
  if (!data_ || data_->size() == 0) throw ContractViolation("MlpProblemInstance: empty dataset");
  if (minibatch_size_ == 0 || minibatch_size_ > data_->size())
    throw ContractViolation("MlpProblemInstance: minibatch_size must be in [1, n_examples]");
  if (data_->n_features() != arch_.input_dim)
    throw ContractViolation("MlpProblemInstance: dataset has " +
                            std::to_string(data_->n_features()) + " features, architecture expects " +
                            std::to_string(arch_.input_dim));
  if (static_cast<std::size_t>(data_->n_classes) > arch_.n_classes)
    throw ContractViolation("MlpProblemInstance: dataset has more classes than the output layer");
  order_.resize(data_->size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
}

Minibatch MlpProblemInstance::next_minibatch() {
  // Partial Fisher-Yates over a persistent arrangement: the first
  // minibatch_size entries form a uniform subset regardless of the
  // arrangement the shuffle starts from.
  const std::size_t n = order_.size();
  for (std::size_t i = 0; i < minibatch_size_; ++i) {
    const std::size_t j = i + rng_.uniform_int(n - i);
    std::swap(order_[i], order_[j]);
  }
  return Minibatch(order_.begin(), order_.begin() + static_cast<std::ptrdiff_t>(minibatch_size_));
}

namespace {

using ConstMatrixMap = Eigen::Map<const Matrix>;
using MatrixMap = Eigen::Map<Matrix>;
using ArrayXXd = Eigen::ArrayXXd;

}  // namespace

LossAndGrad mlp_loss_and_grad(const MlpProblemInstance& inst, const Vector& theta,
                              const Minibatch& batch) {
  if (static_cast<std::size_t>(theta.size()) != inst.parameter_count())
    throw ContractViolation("mlp_loss_and_grad: theta has " + std::to_string(theta.size()) +
                            " entries, shape map expects " + std::to_string(inst.parameter_count()));
  if (batch.empty()) throw ContractViolation("mlp_loss_and_grad: empty minibatch");

  const Dataset& data = inst.dataset();
  const auto& map = inst.shape_map();
  const std::size_t n_layers = map.size() / 2;
  const auto b = static_cast<Eigen::Index>(batch.size());
  const bool relu = inst.architecture().activation == Activation::kRelu;

  // activations[l] is the input to layer l (batch x width).
  std::vector<Matrix> activations(n_layers + 1);
  activations[0].resize(b, data.features.cols());
  for (Eigen::Index r = 0; r < b; ++r) activations[0].row(r) = data.features.row(static_cast<Eigen::Index>(batch[static_cast<std::size_t>(r)]));

  for (std::size_t l = 0; l < n_layers; ++l) {
    const TensorSlot& ws = map[2 * l];
    const TensorSlot& bs = map[2 * l + 1];
    ConstMatrixMap w(theta.data() + ws.offset, static_cast<Eigen::Index>(ws.rows),
                     static_cast<Eigen::Index>(ws.cols));
    Eigen::Map<const Eigen::RowVectorXd> bias(theta.data() + bs.offset,
                                              static_cast<Eigen::Index>(bs.rows));
    Matrix z = activations[l] * w.transpose();
    z.rowwise() += bias;
    if (l + 1 < n_layers) {
      if (relu)
        z = z.array().max(0.0).matrix();
      else
        z = (1.0 / (1.0 + (-z.array()).exp())).matrix();
    }
    activations[l + 1] = std::move(z);
  }

  // Stabilized softmax cross-entropy on the logits.
  const Matrix& logits = activations[n_layers];
  Matrix delta(b, logits.cols());
  double total = 0.0;
  for (Eigen::Index r = 0; r < b; ++r) {
    const double peak = logits.row(r).maxCoeff();
    Eigen::RowVectorXd e = (logits.row(r).array() - peak).exp().matrix();
    const double sum = e.sum();
    const int label = data.labels[batch[static_cast<std::size_t>(r)]];
    total += std::log(sum) + peak - logits(r, label);
    delta.row(r) = e / sum;
    delta(r, label) -= 1.0;
  }
  const double loss = total / static_cast<double>(b);
  if (!std::isfinite(loss)) throw DivergenceError("mlp_loss_and_grad: non-finite loss");
  delta /= static_cast<double>(b);

  Vector grad = Vector::Zero(theta.size());
  for (std::size_t l = n_layers; l-- > 0;) {
    const TensorSlot& ws = map[2 * l];
    const TensorSlot& bs = map[2 * l + 1];
    MatrixMap dw(grad.data() + ws.offset, static_cast<Eigen::Index>(ws.rows),
                 static_cast<Eigen::Index>(ws.cols));
    dw.noalias() = delta.transpose() * activations[l];
    Eigen::Map<Eigen::RowVectorXd>(grad.data() + bs.offset, static_cast<Eigen::Index>(bs.rows)) =
        delta.colwise().sum();
    if (l == 0) break;
    ConstMatrixMap w(theta.data() + ws.offset, static_cast<Eigen::Index>(ws.rows),
                     static_cast<Eigen::Index>(ws.cols));
    Matrix upstream = delta * w;
    const Matrix& a = activations[l];
    if (relu)
      delta = (upstream.array() * (a.array() > 0.0).cast<double>()).matrix();
    else
      delta = (upstream.array() * a.array() * (1.0 - a.array())).matrix();
  }
  return {loss, std::move(grad)};
}

}  // namespace l2l
