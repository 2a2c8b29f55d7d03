#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "op_cases.hpp"
#include "oracles.hpp"
#include "samcp/autodiff.hpp"

using namespace samcp;
using ad::Matrix;
using ad::Tape;
using ad::Tensor;

namespace {

using op_cases::random_matrix;

}  // namespace

TEST_CASE("matmul matches the naive triple loop") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const auto n = 1 + static_cast<ad::Index>(rng() % 6), k = 1 + static_cast<ad::Index>(rng() % 6),
               m = 1 + static_cast<ad::Index>(rng() % 6);
    const Matrix a = random_matrix(n, k, rng), b = random_matrix(k, m, rng);
    Tape tape;
    const Tensor c = ad::matmul(tape.constant(a), tape.constant(b));
    CHECK((c.value() - oracle::naive_matmul(a, b)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("every operator passes a central-difference check") {
  for (const op_cases::Case& c : op_cases::all()) {
    CAPTURE(c.name);
    const ad::GradCheckResult r = ad::grad_check(c.f, c.inputs);
    CHECK(r.checked > 0);
    CHECK(r.max_relative_error < 1e-4);
  }
}

TEST_CASE("focal loss values match the scalar definition") {
  std::mt19937_64 rng(8);
  const Matrix z = random_matrix(4, 5, rng, -6.0, 6.0);
  Matrix t = Matrix::Zero(4, 5);
  t(0, 1) = t(2, 2) = t(3, 0) = 1.0;
  Tape tape;
  const Tensor fl = ad::sigmoid_focal_loss(tape.constant(z), t, 0.25, 2.0);
  for (ad::Index i = 0; i < z.rows(); ++i)
    for (ad::Index j = 0; j < z.cols(); ++j)
      CHECK(fl.value()(i, j) == doctest::Approx(oracle::focal(oracle::sigmoid(z(i, j)), t(i, j), 0.25, 2.0)).epsilon(1e-12));
}

TEST_CASE("fully blocked attention rows are uniform") {
  std::mt19937_64 rng(2);
  const Matrix q = random_matrix(2, 4, rng), k = random_matrix(3, 4, rng), v = random_matrix(3, 4, rng);
  ad::BoolMatrix blocked = ad::BoolMatrix::Constant(2, 3, false);
  blocked.row(1).setConstant(true);
  Tape tape;
  const Tensor out = ad::attention(tape.constant(q), tape.constant(k), tape.constant(v), &blocked, 1);
  const Eigen::RowVectorXd mean = v.colwise().mean();
  CHECK((out.value().row(1) - mean).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("gradients accumulate over shared uses and backward runs once") {
  Tape tape;
  const Tensor x = tape.variable(Matrix::Constant(1, 1, 3.0));
  const Tensor y = x * x + x;
  tape.backward(y);
  CHECK(x.grad()(0, 0) == doctest::Approx(7.0));
  CHECK_THROWS_AS(tape.backward(y), std::logic_error);
}

TEST_CASE("AdamW step follows the closed form") {
  ad::ParameterStore store;
  store.add("w", Matrix::Constant(1, 1, 0.5));
  const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8, wd = 0.01;
  double w = 0.5, m = 0.0, v = 0.0;
  for (int t = 1; t <= 3; ++t) {
    const double g = 0.3 * t;
    ad::step_adam(store, {{"w", Matrix::Constant(1, 1, g)}}, lr, b1, b2, eps, wd);
    w *= 1.0 - lr * wd;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    w -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
    CHECK(store.value("w")(0, 0) == doctest::Approx(w).epsilon(1e-14));
  }
  CHECK(store.step() == 3);
}

TEST_CASE("parameters are shared on a tape and receive gradients by name") {
  ad::ParameterStore store;
  store.add("p", Matrix::Constant(2, 2, 1.0));
  CHECK_THROWS(store.add("p", Matrix::Zero(1, 1)));
  Tape tape;
  const Tensor a = tape.parameter(store, "p"), b = tape.parameter(store, "p");
  CHECK(a.id() == b.id());
  tape.backward(ad::sum_all(a * b));
  const ad::Gradients g = tape.parameter_gradients();
  CHECK(g.at("p").isApprox(Matrix::Constant(2, 2, 2.0)));
}
