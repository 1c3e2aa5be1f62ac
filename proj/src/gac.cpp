#include "l2l/gac.hpp"

#include <string>

namespace l2l {

void GacSpec::validate(std::size_t n_hidden) const {
  for (const auto* cells : {&layer1_cells, &layer2_cells})
    for (auto c : *cells)
      if (c >= n_hidden)
        throw ContractViolation("GacSpec: cell " + std::to_string(c) + " outside [0, " +
                                std::to_string(n_hidden) + ")");
}

void gac_average_inplace(ColMatrix& activations, const std::vector<std::size_t>& cells) {
  const Eigen::Index n = activations.cols();
  if (n == 0) throw ContractViolation("gac_average: no coordinates");
  for (auto cell : cells) {
    const auto row = static_cast<Eigen::Index>(cell);
    if (row >= activations.rows()) throw ContractViolation("gac_average: cell out of range");
    // A constant row is its own mean; summing it could round.
    if ((activations.row(row).array() == activations(row, 0)).all()) continue;
    double sum = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) sum += activations(row, k);
    const double mean = sum / static_cast<double>(n);
    for (Eigen::Index k = 0; k < n; ++k) activations(row, k) = mean;
  }
}

ColMatrix gac_average(const ColMatrix& activations, const std::vector<std::size_t>& cells) {
  ColMatrix out = activations;
  gac_average_inplace(out, cells);
  return out;
}

}  // namespace l2l
