#include "samcp/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace samcp::ad {

// ---------------------------------------------------------------- Tensor

const Matrix& Tensor::value() const { return tape_->value(id_); }
const Matrix& Tensor::grad() const { return tape_->grad(id_); }
bool Tensor::requires_grad() const { return tape_->requires_grad(id_); }

double Tensor::item() const {
  if (rows() != 1 || cols() != 1) throw std::invalid_argument("item() on a non-scalar tensor");
  return value()(0, 0);
}

// ---------------------------------------------------------------- ParameterStore

void ParameterStore::add(const std::string& name, Matrix init) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter: " + name);
  Entry e;
  e.first_moment = Matrix::Zero(init.rows(), init.cols());
  e.second_moment = Matrix::Zero(init.rows(), init.cols());
  e.value = std::move(init);
  entries_.emplace(name, std::move(e));
}

const Matrix& ParameterStore::value(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second.value;
}

Matrix& ParameterStore::value(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second.value;
}

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, _] : entries_) out.push_back(name);
  return out;
}

long ParameterStore::scalar_count() const {
  long n = 0;
  for (const auto& [_, e] : entries_) n += e.value.size();
  return n;
}

bool ParameterStore::operator==(const ParameterStore& other) const {
  if (step_ != other.step_ || entries_.size() != other.entries_.size()) return false;
  for (const auto& [name, e] : entries_) {
    auto it = other.entries_.find(name);
    if (it == other.entries_.end()) return false;
    const Matrix& v = it->second.value;
    if (v.rows() != e.value.rows() || v.cols() != e.value.cols() || v != e.value) return false;
  }
  return true;
}

// ---------------------------------------------------------------- Tape

Tensor Tape::constant(Matrix value) {
  nodes_.push_back({std::move(value), Matrix(), false, nullptr});
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Tensor Tape::variable(Matrix value) {
  nodes_.push_back({std::move(value), Matrix(), true, nullptr});
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Tensor Tape::parameter(const ParameterStore& store, const std::string& name) {
  if (auto it = parameters_.find(name); it != parameters_.end()) return {this, it->second};
  Tensor t = variable(store.value(name));
  parameters_.emplace(name, t.id());
  return t;
}

Tensor Tape::record(Matrix value, std::span<const Tensor> parents, Backward backward) {
  bool needs = false;
  for (const Tensor& p : parents) {
    if (p.tape() != this) throw std::invalid_argument("tensor belongs to a different tape");
    needs = needs || p.requires_grad();
  }
  nodes_.push_back({std::move(value), Matrix(), needs, needs ? std::move(backward) : nullptr});
  return {this, static_cast<int>(nodes_.size() - 1)};
}

const Matrix& Tape::grad(int id) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.size() == 0 && n.value.size() != 0)
    throw std::logic_error("gradient not available for this tensor");
  return n.grad;
}

void Tape::accumulate(const Tensor& t, const Matrix& contribution) {
  Node& n = nodes_[static_cast<std::size_t>(t.id())];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0 && n.value.size() != 0) {
    n.grad = contribution;
  } else {
    n.grad += contribution;
  }
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw std::logic_error("backward called twice on the same tape; re-run the forward pass");
  if (loss.tape() != this) throw std::invalid_argument("loss belongs to a different tape");
  if (loss.rows() != 1 || loss.cols() != 1) throw std::invalid_argument("backward requires a scalar loss");
  consumed_ = true;
  for (Node& n : nodes_) {
    if (n.requires_grad) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  }
  if (!nodes_[static_cast<std::size_t>(loss.id())].requires_grad) return;
  nodes_[static_cast<std::size_t>(loss.id())].grad(0, 0) = 1.0;
  // Creation order is a topological order of the graph.
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.backward && n.requires_grad) n.backward(*this, n.grad);
  }
}

Gradients Tape::parameter_gradients() const {
  Gradients out;
  for (const auto& [name, id] : parameters_) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    out.emplace(name, n.grad.size() == n.value.size() ? n.grad : Matrix::Zero(n.value.rows(), n.value.cols()));
  }
  return out;
}

// ---------------------------------------------------------------- helpers

namespace {

std::array<Index, 2> broadcast_shape(const Matrix& a, const Matrix& b) {
  auto dim = [](Index x, Index y) {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    throw std::invalid_argument("shape mismatch in broadcast");
  };
  return {dim(a.rows(), b.rows()), dim(a.cols(), b.cols())};
}

Matrix expand(const Matrix& m, Index rows, Index cols) {
  if (m.rows() == rows && m.cols() == cols) return m;
  return m.replicate(rows / m.rows(), cols / m.cols());
}

Matrix reduce_to(const Matrix& g, Index rows, Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  Matrix out = g;
  if (rows == 1 && out.rows() != 1) out = Matrix(out.colwise().sum());
  if (cols == 1 && out.cols() != 1) out = Matrix(out.rowwise().sum());
  return out;
}

Tensor unary(const Tensor& a, Matrix value, std::function<Matrix(const Matrix& grad_out)> local) {
  const Tensor parents[] = {a};
  return a.tape()->record(std::move(value), parents,
                          [a, local = std::move(local)](Tape& t, const Matrix& g) { t.accumulate(a, local(g)); });
}

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

}  // namespace

// ---------------------------------------------------------------- operators

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul shape mismatch");
  const Tensor parents[] = {a, b};
  return a.tape()->record(a.value() * b.value(), parents, [a, b](Tape& t, const Matrix& g) {
    if (a.requires_grad()) t.accumulate(a, g * b.value().transpose());
    if (b.requires_grad()) t.accumulate(b, a.value().transpose() * g);
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  const auto [r, c] = broadcast_shape(a.value(), b.value());
  const Tensor parents[] = {a, b};
  return a.tape()->record(expand(a.value(), r, c) + expand(b.value(), r, c), parents, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, reduce_to(g, a.rows(), a.cols()));
    t.accumulate(b, reduce_to(g, b.rows(), b.cols()));
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const auto [r, c] = broadcast_shape(a.value(), b.value());
  const Tensor parents[] = {a, b};
  return a.tape()->record(expand(a.value(), r, c) - expand(b.value(), r, c), parents, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, reduce_to(g, a.rows(), a.cols()));
    t.accumulate(b, reduce_to(-g, b.rows(), b.cols()));
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const auto [r, c] = broadcast_shape(a.value(), b.value());
  const Tensor parents[] = {a, b};
  Matrix value = expand(a.value(), r, c).cwiseProduct(expand(b.value(), r, c));
  return a.tape()->record(std::move(value), parents, [a, b, r, c](Tape& t, const Matrix& g) {
    if (a.requires_grad()) t.accumulate(a, reduce_to(g.cwiseProduct(expand(b.value(), r, c)), a.rows(), a.cols()));
    if (b.requires_grad()) t.accumulate(b, reduce_to(g.cwiseProduct(expand(a.value(), r, c)), b.rows(), b.cols()));
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  const auto [r, c] = broadcast_shape(a.value(), b.value());
  const Tensor parents[] = {a, b};
  Matrix value = expand(a.value(), r, c).cwiseQuotient(expand(b.value(), r, c));
  return a.tape()->record(std::move(value), parents, [a, b, r, c](Tape& t, const Matrix& g) {
    const Matrix bb = expand(b.value(), r, c);
    if (a.requires_grad()) t.accumulate(a, reduce_to(g.cwiseQuotient(bb), a.rows(), a.cols()));
    if (b.requires_grad()) {
      const Matrix aa = expand(a.value(), r, c);
      t.accumulate(b, reduce_to(-g.cwiseProduct(aa).cwiseQuotient(bb.cwiseProduct(bb)), b.rows(), b.cols()));
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(a, a.value() * factor, [factor](const Matrix& g) { return Matrix(g * factor); });
}

Tensor add_constant(const Tensor& a, double c) {
  return unary(a, (a.value().array() + c).matrix(), [](const Matrix& g) { return g; });
}

Tensor sigmoid(const Tensor& a) {
  Matrix y = a.value().unaryExpr([](double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  return unary(a, y, [y](const Matrix& g) { return Matrix(g.array() * y.array() * (1.0 - y.array())); });
}

Tensor relu(const Tensor& a) {
  const Matrix x = a.value();
  return unary(a, x.cwiseMax(0.0), [x](const Matrix& g) { return Matrix((x.array() > 0.0).select(g.array(), 0.0)); });
}

Tensor exp(const Tensor& a) {
  Matrix y = a.value().array().exp().matrix();
  return unary(a, y, [y](const Matrix& g) { return Matrix(g.cwiseProduct(y)); });
}

Tensor log(const Tensor& a) {
  const Matrix x = a.value();
  return unary(a, x.array().log().matrix(), [x](const Matrix& g) { return Matrix(g.cwiseQuotient(x)); });
}

Tensor softmax(const Tensor& a, int axis) {
  if (axis != 0 && axis != 1) throw std::invalid_argument("softmax axis must be 0 or 1");
  if (axis == 0) return transpose(softmax(transpose(a), 1));
  Matrix y = a.value();
  for (Index r = 0; r < y.rows(); ++r) {
    const double m = y.row(r).maxCoeff();
    y.row(r) = (y.row(r).array() - m).exp().matrix();
    y.row(r) /= y.row(r).sum();
  }
  return unary(a, y, [y](const Matrix& g) {
    const Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
    return Matrix(y.cwiseProduct(g - dot.replicate(1, g.cols())));
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const Index n = x.cols();
  if (gain.rows() != 1 || gain.cols() != n || bias.rows() != 1 || bias.cols() != n)
    throw std::invalid_argument("layer_norm parameter shape mismatch");
  const Eigen::VectorXd mu = x.value().rowwise().mean();
  Matrix centered = x.value() - mu.replicate(1, n);
  const Eigen::VectorXd inv_std =
      ((centered.array().square().rowwise().sum() / static_cast<double>(n)) + eps).rsqrt().matrix();
  const Matrix xhat = centered.array().colwise() * inv_std.array();
  Matrix y = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() + bias.value().row(0).array();
  const Tensor parents[] = {x, gain, bias};
  return x.tape()->record(std::move(y), parents, [x, gain, bias, xhat, inv_std, n](Tape& t, const Matrix& g) {
    if (gain.requires_grad()) t.accumulate(gain, g.cwiseProduct(xhat).colwise().sum());
    if (bias.requires_grad()) t.accumulate(bias, g.colwise().sum());
    if (x.requires_grad()) {
      const Matrix dxhat = g.array().rowwise() * gain.value().row(0).array();
      const Eigen::VectorXd mean_d = dxhat.rowwise().mean();
      const Eigen::VectorXd mean_dx = dxhat.cwiseProduct(xhat).rowwise().mean();
      Matrix dx = dxhat - mean_d.replicate(1, n) - xhat.cwiseProduct(mean_dx.replicate(1, n));
      dx = dx.array().colwise() * inv_std.array();
      t.accumulate(x, dx);
    }
  });
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat of nothing");
  if (axis != 0 && axis != 1) throw std::invalid_argument("concat axis must be 0 or 1");
  Index rows = 0, cols = 0;
  for (const Tensor& p : parts) {
    if (axis == 0) {
      if (p.cols() != parts[0].cols()) throw std::invalid_argument("concat shape mismatch");
      rows += p.rows();
      cols = p.cols();
    } else {
      if (p.rows() != parts[0].rows()) throw std::invalid_argument("concat shape mismatch");
      cols += p.cols();
      rows = p.rows();
    }
  }
  Matrix y(rows, cols);
  Index offset = 0;
  for (const Tensor& p : parts) {
    if (axis == 0) {
      y.middleRows(offset, p.rows()) = p.value();
      offset += p.rows();
    } else {
      y.middleCols(offset, p.cols()) = p.value();
      offset += p.cols();
    }
  }
  std::vector<Tensor> kept(parts.begin(), parts.end());
  return parts[0].tape()->record(std::move(y), parts, [kept, axis](Tape& t, const Matrix& g) {
    Index off = 0;
    for (const Tensor& p : kept) {
      if (axis == 0) {
        if (p.requires_grad()) t.accumulate(p, g.middleRows(off, p.rows()));
        off += p.rows();
      } else {
        if (p.requires_grad()) t.accumulate(p, g.middleCols(off, p.cols()));
        off += p.cols();
      }
    }
  });
}

Tensor slice(const Tensor& a, int axis, Index start, Index length) {
  const Index extent = axis == 0 ? a.rows() : a.cols();
  if ((axis != 0 && axis != 1) || start < 0 || length < 0 || start + length > extent)
    throw std::invalid_argument("slice out of range");
  Matrix y = axis == 0 ? Matrix(a.value().middleRows(start, length)) : Matrix(a.value().middleCols(start, length));
  const Index r = a.rows(), c = a.cols();
  return unary(a, std::move(y), [axis, start, length, r, c](const Matrix& g) {
    Matrix out = Matrix::Zero(r, c);
    if (axis == 0) out.middleRows(start, length) = g; else out.middleCols(start, length) = g;
    return out;
  });
}

Tensor sum(const Tensor& a, int axis) {
  const Index r = a.rows(), c = a.cols();
  if (axis == 0)
    return unary(a, a.value().colwise().sum(), [r](const Matrix& g) { return Matrix(g.replicate(r, 1)); });
  if (axis == 1)
    return unary(a, a.value().rowwise().sum(), [c](const Matrix& g) { return Matrix(g.replicate(1, c)); });
  throw std::invalid_argument("sum axis must be 0 or 1");
}

Tensor mean(const Tensor& a, int axis) {
  const Index n = axis == 0 ? a.rows() : a.cols();
  return scale(sum(a, axis), 1.0 / static_cast<double>(n));
}

Tensor sum_all(const Tensor& a) {
  const Index r = a.rows(), c = a.cols();
  Matrix y(1, 1);
  y(0, 0) = a.value().sum();
  return unary(a, std::move(y), [r, c](const Matrix& g) { return Matrix(Matrix::Constant(r, c, g(0, 0))); });
}

Tensor transpose(const Tensor& a) {
  return unary(a, a.value().transpose(), [](const Matrix& g) { return Matrix(g.transpose()); });
}

Tensor reshape(const Tensor& a, Index rows, Index cols) {
  if (rows * cols != a.value().size()) throw std::invalid_argument("reshape size mismatch");
  const Index r = a.rows(), c = a.cols();
  Matrix y = a.value().reshaped(rows, cols);
  return unary(a, std::move(y), [r, c](const Matrix& g) { return Matrix(g.reshaped(r, c)); });
}

Tensor select_rows(const Tensor& a, std::span<const Index> rows) {
  Matrix y(static_cast<Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= a.rows()) throw std::invalid_argument("select_rows index out of range");
    y.row(static_cast<Index>(i)) = a.value().row(rows[i]);
  }
  std::vector<Index> idx(rows.begin(), rows.end());
  const Index r = a.rows(), c = a.cols();
  return unary(a, std::move(y), [idx, r, c](const Matrix& g) {
    Matrix out = Matrix::Zero(r, c);
    for (std::size_t i = 0; i < idx.size(); ++i) out.row(idx[i]) += g.row(static_cast<Index>(i));
    return out;
  });
}

Tensor masked_fill(const Tensor& a, const BoolMatrix& mask, double value) {
  if (mask.rows() != a.rows() || mask.cols() != a.cols()) throw std::invalid_argument("masked_fill shape mismatch");
  Matrix y = mask.select(Matrix::Constant(a.rows(), a.cols(), value), a.value());
  return unary(a, std::move(y), [mask](const Matrix& g) { return Matrix(mask.select(Matrix::Zero(g.rows(), g.cols()), g)); });
}

Tensor normalize_rows(const Tensor& a) {
  const Eigen::VectorXd norms = a.value().rowwise().norm();
  if ((norms.array() <= 0.0).any()) throw std::invalid_argument("cannot normalize a zero-norm vector");
  const Index c = a.cols();
  Matrix y = a.value().array().colwise() / norms.array();
  return unary(a, y, [y, norms, c](const Matrix& g) {
    const Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
    Matrix dx = g - y.cwiseProduct(dot.replicate(1, c));
    return Matrix(dx.array().colwise() / norms.array());
  });
}

Tensor sigmoid_focal_loss(const Tensor& logits, const Matrix& targets, double alpha, double gamma) {
  if (targets.rows() != logits.rows() || targets.cols() != logits.cols())
    throw std::invalid_argument("focal loss target shape mismatch");
  const Matrix z = logits.value();
  Matrix y(z.rows(), z.cols());
  Matrix dz(z.rows(), z.cols());
  for (Index i = 0; i < z.size(); ++i) {
    const double x = z(i);
    const double p = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    const double q = 1.0 - p;
    const double log_p = -softplus(-x);
    const double log_q = -softplus(x);
    const double t = targets(i);
    const double pos = alpha * std::pow(q, gamma) * (-log_p);
    const double neg = (1.0 - alpha) * std::pow(p, gamma) * (-log_q);
    y(i) = t * pos + (1.0 - t) * neg;
    const double dpos = alpha * (gamma * p * std::pow(q, gamma) * log_p - std::pow(q, gamma + 1.0));
    const double dneg = (1.0 - alpha) * (-gamma * std::pow(p, gamma) * q * log_q + std::pow(p, gamma + 1.0));
    dz(i) = t * dpos + (1.0 - t) * dneg;
  }
  return unary(logits, std::move(y), [dz](const Matrix& g) { return Matrix(g.cwiseProduct(dz)); });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const BoolMatrix* blocked, int heads) {
  if (heads <= 0 || q.cols() % heads != 0 || k.cols() != q.cols() || v.cols() % heads != 0)
    throw std::invalid_argument("attention: feature dim not divisible by head count");
  if (k.rows() != v.rows()) throw std::invalid_argument("attention: key/value count mismatch");
  if (blocked && (blocked->rows() != q.rows() || blocked->cols() != k.rows()))
    throw std::invalid_argument("attention: mask shape mismatch");
  const Index dh = q.cols() / heads;
  const Index dv = v.cols() / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const Tensor qh = heads == 1 ? q : slice(q, 1, h * dh, dh);
    const Tensor kh = heads == 1 ? k : slice(k, 1, h * dh, dh);
    const Tensor vh = heads == 1 ? v : slice(v, 1, h * dv, dv);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    if (blocked) scores = masked_fill(scores, *blocked, kMaskedLogit);
    outs.push_back(matmul(softmax(scores, 1), vh));
  }
  return heads == 1 ? outs.front() : concat(outs, 1);
}

// ---------------------------------------------------------------- optimizer

void step_adam(ParameterStore& store, const Gradients& grads, double lr, double beta1, double beta2, double eps,
               double weight_decay) {
  store.step_ += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(store.step_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(store.step_));
  for (auto& [name, e] : store.entries_) {
    auto it = grads.find(name);
    if (it == grads.end()) continue;
    const Matrix& g = it->second;
    if (g.rows() != e.value.rows() || g.cols() != e.value.cols())
      throw std::invalid_argument("gradient shape mismatch for " + name);
    e.value *= (1.0 - lr * weight_decay);
    e.first_moment = beta1 * e.first_moment + (1.0 - beta1) * g;
    e.second_moment = beta2 * e.second_moment + (1.0 - beta2) * g.cwiseProduct(g);
    const Matrix m_hat = e.first_moment / bc1;
    const Matrix v_hat = e.second_moment / bc2;
    e.value -= (lr * m_hat.array() / (v_hat.array().sqrt() + eps)).matrix();
  }
}

// ---------------------------------------------------------------- grad check

GradCheckResult grad_check(const ScalarFunction& f, const std::vector<Matrix>& inputs, double eps, double floor) {
  std::vector<Matrix> analytic;
  {
    Tape tape;
    std::vector<Tensor> vars;
    for (const Matrix& m : inputs) vars.push_back(tape.variable(m));
    Tensor loss = f(tape, vars);
    tape.backward(loss);
    for (const Tensor& v : vars) analytic.push_back(v.grad());
  }
  auto evaluate = [&](const std::vector<Matrix>& xs) {
    Tape tape;
    std::vector<Tensor> vars;
    for (const Matrix& m : xs) vars.push_back(tape.constant(m));
    return f(tape, vars).item();
  };
  GradCheckResult result;
  std::vector<Matrix> probe = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (Index j = 0; j < inputs[i].size(); ++j) {
      const double orig = probe[i](j);
      probe[i](j) = orig + eps;
      const double up = evaluate(probe);
      probe[i](j) = orig - eps;
      const double down = evaluate(probe);
      probe[i](j) = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[i](j);
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), floor});
      result.max_absolute_error = std::max(result.max_absolute_error, abs_err);
      result.max_relative_error = std::max(result.max_relative_error, rel);
      ++result.checked;
    }
  }
  return result;
}

}  // namespace samcp::ad
