#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "samcp/hungarian.hpp"

using namespace samcp;

namespace {

// Minimum over all injective maps from the smaller side into the larger one.
double brute_force(const Eigen::MatrixXd& cost) {
  const bool wide = cost.rows() <= cost.cols();
  const Eigen::MatrixXd c = wide ? cost : Eigen::MatrixXd(cost.transpose());
  const auto n = static_cast<int>(c.rows()), m = static_cast<int>(c.cols());
  std::vector<int> cols(static_cast<std::size_t>(m));
  std::iota(cols.begin(), cols.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (int r = 0; r < n; ++r) total += c(r, cols[static_cast<std::size_t>(r)]);
    best = std::min(best, total);
  } while (std::next_permutation(cols.begin(), cols.end()));
  return best;
}

}  // namespace

TEST_CASE("assignment equals the exhaustive minimum on 1000 random matrices") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> size(1, 7);
  std::uniform_real_distribution<double> value(-5.0, 10.0);
  std::uniform_int_distribution<int> small(0, 3);
  for (int trial = 0; trial < 1000; ++trial) {
    const int r = size(rng), c = size(rng);
    Eigen::MatrixXd cost(r, c);
    // Every other matrix uses small integers so ties are common.
    for (Eigen::Index i = 0; i < cost.size(); ++i)
      cost.data()[i] = trial % 2 ? value(rng) : static_cast<double>(small(rng));
    const Assignment a = hungarian(cost);
    CHECK(a.total_cost == doctest::Approx(brute_force(cost)).epsilon(1e-12));

    // A valid matching covering the smaller side.
    int matched = 0;
    std::vector<bool> used(static_cast<std::size_t>(c), false);
    for (int i = 0; i < r; ++i) {
      const int j = a.row_to_col[static_cast<std::size_t>(i)];
      if (j < 0) continue;
      CHECK_FALSE(used[static_cast<std::size_t>(j)]);
      used[static_cast<std::size_t>(j)] = true;
      CHECK(a.col_to_row[static_cast<std::size_t>(j)] == i);
      ++matched;
    }
    CHECK(matched == std::min(r, c));
  }
}

TEST_CASE("degenerate inputs") {
  CHECK(hungarian(Eigen::MatrixXd(0, 3)).pairs().empty());
  Eigen::MatrixXd bad = Eigen::MatrixXd::Zero(2, 2);
  bad(0, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(hungarian(bad), std::invalid_argument);
  Eigen::MatrixXd one(1, 1);
  one << 4.0;
  CHECK(hungarian(one).pairs() == std::vector<std::pair<int, int>>{{0, 0}});
}
