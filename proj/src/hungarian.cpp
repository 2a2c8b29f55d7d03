#include "samcp/hungarian.hpp"

#include <limits>
#include <stdexcept>

namespace samcp {

std::vector<std::pair<int, int>> Assignment::pairs() const {
  std::vector<std::pair<int, int>> out;
  for (std::size_t r = 0; r < row_to_col.size(); ++r)
    if (row_to_col[r] >= 0) out.emplace_back(static_cast<int>(r), row_to_col[r]);
  return out;
}

namespace {

// Requires rows <= cols. Returns the column of each row.
std::vector<int> solve_wide(const Eigen::MatrixXd& a) {
  const auto n = static_cast<int>(a.rows());
  const auto m = static_cast<int>(a.cols());
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0), v(static_cast<std::size_t>(m + 1), 0.0);
  std::vector<int> p(static_cast<std::size_t>(m + 1), 0), way(static_cast<std::size_t>(m + 1), 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(m + 1), kInf);
    std::vector<bool> used(static_cast<std::size_t>(m + 1), false);
    do {
      used[static_cast<std::size_t>(j0)] = true;
      const int i0 = p[static_cast<std::size_t>(j0)];
      double delta = kInf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = a(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= m; ++j)
    if (p[static_cast<std::size_t>(j)] != 0) row_to_col[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
  return row_to_col;
}

}  // namespace

Assignment hungarian(const Eigen::MatrixXd& cost) {
  if (!cost.allFinite()) throw std::invalid_argument("hungarian: cost matrix must be finite");
  const auto R = static_cast<int>(cost.rows());
  const auto S = static_cast<int>(cost.cols());
  Assignment out;
  out.row_to_col.assign(static_cast<std::size_t>(R), -1);
  out.col_to_row.assign(static_cast<std::size_t>(S), -1);
  if (R == 0 || S == 0) return out;

  if (R <= S) {
    out.row_to_col = solve_wide(cost);
    for (int r = 0; r < R; ++r)
      if (out.row_to_col[static_cast<std::size_t>(r)] >= 0)
        out.col_to_row[static_cast<std::size_t>(out.row_to_col[static_cast<std::size_t>(r)])] = r;
  } else {
    out.col_to_row = solve_wide(cost.transpose());
    for (int c = 0; c < S; ++c)
      if (out.col_to_row[static_cast<std::size_t>(c)] >= 0)
        out.row_to_col[static_cast<std::size_t>(out.col_to_row[static_cast<std::size_t>(c)])] = c;
  }
  for (int r = 0; r < R; ++r)
    if (out.row_to_col[static_cast<std::size_t>(r)] >= 0) out.total_cost += cost(r, out.row_to_col[static_cast<std::size_t>(r)]);
  return out;
}

}  // namespace samcp
