#pragma once

#include <Eigen/Dense>

#include <utility>
#include <vector>

namespace samcp {

struct Assignment {
  std::vector<int> row_to_col;  // -1 when the row is unassigned
  std::vector<int> col_to_row;  // -1 when the column is unassigned
  double total_cost = 0.0;

  std::vector<std::pair<int, int>> pairs() const;
};

/// Minimum-cost matching of min(R, S) pairs on an R x S cost matrix
/// (shortest augmenting paths with potentials, O(n^2 m)). Rows are inserted
/// in increasing order and ties go to the lowest column index, so the result
/// is deterministic. Non-finite costs are rejected.
Assignment hungarian(const Eigen::MatrixXd& cost);

}  // namespace samcp
