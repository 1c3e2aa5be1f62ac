#pragma once

#include <cstddef>
#include <vector>

#include "l2l/lstm.hpp"

namespace l2l {

// Hidden cells of each LSTM layer whose outgoing activation is replaced by
// its mean over all coordinates (global averaging cells).
struct GacSpec {
  std::vector<std::size_t> layer1_cells;
  std::vector<std::size_t> layer2_cells;

  bool empty() const { return layer1_cells.empty() && layer2_cells.empty(); }
  void validate(std::size_t n_hidden) const;
};

// Replaces each designated row of activations (H x n) by its mean across
// columns. The sum runs in column order so every run reduces identically.
// The averaging operator is symmetric, so the same call maps output adjoints
// to input adjoints.
void gac_average_inplace(ColMatrix& activations, const std::vector<std::size_t>& cells);

ColMatrix gac_average(const ColMatrix& activations, const std::vector<std::size_t>& cells);

}  // namespace l2l
