#pragma once

#include <Eigen/Dense>

#include <array>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace samcp::ad {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;
using BoolMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;
using Index = Eigen::Index;

/// Named gradients, ordered by parameter name.
using Gradients = std::map<std::string, Matrix>;

class Tape;

/// Handle to a node on a tape. Tensors are rank-2 (rows x cols); vectors are
/// 1 x n or n x 1 and scalars are 1 x 1.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  const Matrix& grad() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  std::array<Index, 2> shape() const { return {rows(), cols()}; }
  double item() const;
  bool requires_grad() const;

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool defined() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Trainable parameters plus their AdamW moment estimates.
class ParameterStore {
 public:
  struct Entry {
    Matrix value;
    Matrix first_moment;
    Matrix second_moment;
  };

  void add(const std::string& name, Matrix init);
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const Matrix& value(const std::string& name) const;
  Matrix& value(const std::string& name);
  const std::map<std::string, Entry>& entries() const { return entries_; }
  std::map<std::string, Entry>& entries() { return entries_; }
  std::vector<std::string> names() const;
  long step() const { return step_; }
  void set_step(long step) { step_ = step; }
  long scalar_count() const;

  bool operator==(const ParameterStore& other) const;

 private:
  friend void step_adam(ParameterStore&, const Gradients&, double, double, double, double, double);
  std::map<std::string, Entry> entries_;
  long step_ = 0;
};

/// Define-by-run reverse-mode tape. A tape and its tensors belong to one
/// thread; build a fresh tape for every forward pass.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor constant(Matrix value);
  Tensor variable(Matrix value);
  /// Leaf bound to a stored parameter; repeated lookups return the same node.
  Tensor parameter(const ParameterStore& store, const std::string& name);

  Tensor record(Matrix value, std::span<const Tensor> parents, Backward backward);

  /// Accumulates d(loss)/d(node) for every node reachable from a scalar loss.
  /// Throws std::logic_error if called twice on the same tape.
  void backward(const Tensor& loss);

  /// Adds `contribution` to the gradient slot of `t` (no-op for constants).
  void accumulate(const Tensor& t, const Matrix& contribution);

  Gradients parameter_gradients() const;

  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Matrix& grad(int id) const;
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::deque<Node> nodes_;
  std::map<std::string, int> parameters_;
  bool consumed_ = false;
};

// Forward operators. Binary arithmetic broadcasts along any dimension of size 1.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_constant(const Tensor& a, double c);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
/// Softmax along `axis` (0: down columns, 1: across rows).
Tensor softmax(const Tensor& a, int axis);
/// Row-wise layer normalization with learned gain and bias (both 1 x cols).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor slice(const Tensor& a, int axis, Index start, Index length);
Tensor sum(const Tensor& a, int axis);
Tensor mean(const Tensor& a, int axis);
Tensor sum_all(const Tensor& a);
Tensor transpose(const Tensor& a);
/// Column-major reshape.
Tensor reshape(const Tensor& a, Index rows, Index cols);
Tensor select_rows(const Tensor& a, std::span<const Index> rows);
/// Replaces entries where `mask` is set by `value`; those entries get no gradient.
Tensor masked_fill(const Tensor& a, const BoolMatrix& mask, double value);
/// Divides each row by its Euclidean norm. Zero rows are rejected.
Tensor normalize_rows(const Tensor& a);
/// Elementwise sigmoid focal loss evaluated from logits against {0,1} targets.
Tensor sigmoid_focal_loss(const Tensor& logits, const Matrix& targets, double alpha, double gamma);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

/// Value written by masked_fill for blocked attention logits.
inline constexpr double kMaskedLogit = -1e9;

/// Scaled dot-product attention with additive masking for one head set.
/// `blocked(m, n)` removes key n from query m; fully blocked rows attend
/// uniformly over all keys.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const BoolMatrix* blocked, int heads);

/// AdamW step with bias correction and decoupled weight decay.
void step_adam(ParameterStore& store, const Gradients& grads, double lr, double beta1, double beta2,
               double eps, double weight_decay);

/// Scalar function of a set of matrices, recorded on the supplied tape.
using ScalarFunction = std::function<Tensor(Tape&, std::span<const Tensor>)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  long checked = 0;
};

/// Compares analytic gradients against central differences with step `eps`.
/// Relative error per entry is |a - n| / max(|a|, |n|, floor).
GradCheckResult grad_check(const ScalarFunction& f, const std::vector<Matrix>& inputs, double eps = 1e-5,
                           double floor = 1e-6);

}  // namespace samcp::ad
