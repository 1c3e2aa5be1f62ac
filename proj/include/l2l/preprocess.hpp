#pragma once

#include <string_view>
#include <optional>

#include "l2l/numerics.hpp"

namespace l2l {

// How gradient coordinates are presented to the learned optimizer.
enum class InputMode {
  kRaw,           // 1 channel: input_scale * grad
  kPreprocessed,  // 2 channels: log-magnitude / sign encoding
};

std::string_view to_string(InputMode mode);
std::optional<InputMode> parse_input_mode(std::string_view name);
int channel_count(InputMode mode);

inline constexpr double kDefaultPreprocessP = 10.0;

struct PreprocessedCoordinate {
  double magnitude;
  double sign;
};

// (log|g| / p, sgn g) when |g| >= e^-p, otherwise (-1, e^p g).
PreprocessedCoordinate preprocess_coordinate(double grad, double p = kDefaultPreprocessP);

// 2 x n matrix: row 0 magnitude channel, row 1 sign channel. Throws
// ContractViolation on p <= 0 and on a non-finite coordinate.
Matrix preprocess_gradient(const Vector& grad, double p = kDefaultPreprocessP);

Vector rescale_update(const Vector& raw, double factor);

}  // namespace l2l
