#include "l2l/preprocess.hpp"

#include <cmath>
#include <string>

namespace l2l {

std::string_view to_string(InputMode mode) {
  return mode == InputMode::kRaw ? "raw" : "preprocessed";
}

std::optional<InputMode> parse_input_mode(std::string_view name) {
  if (name == "raw") return InputMode::kRaw;
  if (name == "preprocessed") return InputMode::kPreprocessed;
  return std::nullopt;
}

int channel_count(InputMode mode) { return mode == InputMode::kRaw ? 1 : 2; }

PreprocessedCoordinate preprocess_coordinate(double grad, double p) {
  const double magnitude = std::abs(grad);
  if (magnitude >= std::exp(-p)) {
    const double sign = grad > 0.0 ? 1.0 : -1.0;
    return {std::log(magnitude) / p, sign};
  }
  return {-1.0, std::exp(p) * grad};
}

Matrix preprocess_gradient(const Vector& grad, double p) {
  if (!(p > 0.0)) throw ContractViolation("preprocess_gradient: p must be positive");
  Matrix out(2, grad.size());
  for (Eigen::Index k = 0; k < grad.size(); ++k) {
    if (!std::isfinite(grad[k]))
      throw ContractViolation("preprocess_gradient: non-finite gradient at coordinate " +
                              std::to_string(k));
    const auto pc = preprocess_coordinate(grad[k], p);
    out(0, k) = pc.magnitude;
    out(1, k) = pc.sign;
  }
  return out;
}

Vector rescale_update(const Vector& raw, double factor) {
  if (!std::isfinite(factor)) throw ContractViolation("rescale_update: factor must be finite");
  return raw * factor;
}

}  // namespace l2l
