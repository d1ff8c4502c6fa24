// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

namespace archx {

struct Assignment {
  std::vector<int> row_to_col;
  double cost = 0.0;
};

/// Minimum-cost perfect matching on a square cost matrix (row-major, n x n)
/// by the Hungarian method with potentials, O(n^3).
Assignment solve_assignment(const std::vector<double>& costs, int n);

}  // namespace archx
