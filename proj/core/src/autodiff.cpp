#include "metacpr/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "metacpr/errors.hpp"

namespace metacpr {

const char* group_name(Group g) {
  switch (g) {
    case Group::policy:
      return "policy";
    case Group::critic:
      return "critic";
    case Group::cpr:
      return "cpr";
  }
  return "?";
}

namespace ad {

Var Tape::constant(Matrix value) { return record(std::move(value), nullptr); }

Var Tape::constant(double value) {
  Matrix m(1, 1);
  m(0, 0) = value;
  return constant(std::move(m));
}

Var Tape::parameter(Group group, int index, const Matrix& value) {
  const auto key = std::make_pair(static_cast<int>(group), index);
  if (auto it = params_.find(key); it != params_.end()) return Var(this, it->second);
  Var v = record(value, nullptr);
  params_.emplace(key, v.id());
  return v;
}

Var Tape::record(Matrix value, Backward fn) {
  nodes_.push_back(Node{std::move(value), Matrix(), false, std::move(fn)});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::backward(Var root) {
  if (root.tape() != this) throw ContractError("backward: root belongs to another tape");
  if (root.rows() != 1 || root.cols() != 1) throw ContractError("backward: root must be 1x1");
  for (auto& n : nodes_) {
    n.has_grad = false;
  }
  nodes_[root.id()].grad = Matrix::Ones(1, 1);
  nodes_[root.id()].has_grad = true;
  for (int id = root.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.has_grad && n.backward) n.backward(*this, id);
  }
}

Matrix Tape::parameter_grad(Group group, int index) const {
  const auto it = params_.find({static_cast<int>(group), index});
  if (it == params_.end()) throw ContractError("parameter_grad: parameter not on tape");
  const Node& n = nodes_[it->second];
  if (!n.has_grad) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

bool Tape::parameter_reached(Group group, int index) const {
  const auto it = params_.find({static_cast<int>(group), index});
  return it != params_.end() && nodes_[it->second].has_grad;
}

bool Tape::has_parameter(Group group, int index) const {
  return params_.count({static_cast<int>(group), index}) != 0;
}

void Tape::clear() {
  nodes_.clear();
  params_.clear();
}

namespace {

void check_same_tape(Var a, Var b, const char* op) {
  if (a.tape() != b.tape()) throw ContractError(std::string(op) + ": operands on different tapes");
}

void check_same_shape(Var a, Var b, const char* op) {
  check_same_tape(a, b, op);
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ContractError(std::string(op) + ": shape mismatch");
  }
}

template <typename F, typename G>
Var unary(Var a, F forward, G derivative) {
  Matrix out = a.value().unaryExpr(forward);
  const int ia = a.id();
  return a.tape()->record(std::move(out), [ia, derivative](Tape& t, int self) {
    const Matrix& x = t.value(ia);
    const Matrix& y = t.value(self);
    Matrix g(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      g.data()[i] = t.grad(self).data()[i] * derivative(x.data()[i], y.data()[i]);
    }
    t.accumulate(ia, g);
  });
}

}  // namespace

Var detach(Var a) { return a.tape()->constant(a.value()); }

Var add(Var a, Var b) {
  check_same_shape(a, b, "add");
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(a.value() + b.value(), [ia, ib](Tape& t, int self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, t.grad(self));
  });
}

Var sub(Var a, Var b) {
  check_same_shape(a, b, "sub");
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(a.value() - b.value(), [ia, ib](Tape& t, int self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, -t.grad(self));
  });
}

Var mul(Var a, Var b) {
  check_same_shape(a, b, "mul");
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(a.value().cwiseProduct(b.value()), [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    t.accumulate(ia, g.cwiseProduct(t.value(ib)));
    t.accumulate(ib, g.cwiseProduct(t.value(ia)));
  });
}

Var add_row(Var a, Var b) {
  check_same_tape(a, b, "add_row");
  if (b.rows() != 1 || b.cols() != a.cols()) throw ContractError("add_row: bias shape mismatch");
  const int ia = a.id(), ib = b.id();
  Matrix out = a.value().rowwise() + b.value().row(0);
  return a.tape()->record(std::move(out), [ia, ib](Tape& t, int self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, t.grad(self).colwise().sum());
  });
}

Var mul_row(Var a, Var b) {
  check_same_tape(a, b, "mul_row");
  if (b.rows() != 1 || b.cols() != a.cols()) throw ContractError("mul_row: shape mismatch");
  const int ia = a.id(), ib = b.id();
  Matrix out = a.value().array().rowwise() * b.value().row(0).array();
  return a.tape()->record(std::move(out), [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    Matrix ga = g.array().rowwise() * t.value(ib).row(0).array();
    t.accumulate(ia, ga);
    t.accumulate(ib, g.cwiseProduct(t.value(ia)).colwise().sum());
  });
}

Var scale(Var a, double s) {
  const int ia = a.id();
  return a.tape()->record(a.value() * s, [ia, s](Tape& t, int self) { t.accumulate(ia, t.grad(self) * s); });
}

Var add_scalar(Var a, double s) {
  const int ia = a.id();
  Matrix out = a.value().array() + s;
  return a.tape()->record(std::move(out), [ia](Tape& t, int self) { t.accumulate(ia, t.grad(self)); });
}

Var neg(Var a) { return scale(a, -1.0); }

Var matmul(Var x, Var w) {
  check_same_tape(x, w, "matmul");
  if (x.cols() != w.rows()) throw ContractError("matmul: inner dimension mismatch");
  const int ix = x.id(), iw = w.id();
  Matrix out = x.value() * w.value();
  return x.tape()->record(std::move(out), [ix, iw](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    t.accumulate(ix, g * t.value(iw).transpose());
    t.accumulate(iw, t.value(ix).transpose() * g);
  });
}

Var affine(Var x, Var w, Var b) {
  check_same_tape(x, w, "affine");
  check_same_tape(x, b, "affine");
  if (x.cols() != w.rows()) throw ContractError("affine: inner dimension mismatch");
  if (b.rows() != 1 || b.cols() != w.cols()) throw ContractError("affine: bias shape mismatch");
  const int ix = x.id(), iw = w.id(), ib = b.id();
  Matrix out = x.value() * w.value();
  out.rowwise() += b.value().row(0);
  return x.tape()->record(std::move(out), [ix, iw, ib](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    t.accumulate(ix, g * t.value(iw).transpose());
    t.accumulate(iw, t.value(ix).transpose() * g);
    t.accumulate(ib, g.colwise().sum());
  });
}

Var tanh(Var a) {
  return unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](double, double y) { return y * (1.0 - y); });
}

Var softplus(Var a) {
  return unary(
      a,
      [](double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Var exp(Var a) {
  return unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var sqrt(Var a) {
  return unary(
      a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Var square(Var a) {
  return unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var reciprocal(Var a) {
  return unary(
      a, [](double x) { return 1.0 / x; }, [](double, double y) { return -y * y; });
}

Var clamp(Var a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return x < lo ? lo : (x > hi ? hi : x); },
      [lo, hi](double x, double) { return (x < lo || x > hi) ? 0.0 : 1.0; });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no parts");
  Tape* tape = parts[0].tape();
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    if (p.tape() != tape) throw ContractError("concat_cols: operands on different tapes");
    if (p.rows() != rows) throw ContractError("concat_cols: row count mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<std::pair<int, Eigen::Index>> layout;
  Eigen::Index offset = 0;
  for (const Var& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    layout.emplace_back(p.id(), p.cols());
    offset += p.cols();
  }
  return tape->record(std::move(out), [layout](Tape& t, int self) {
    Eigen::Index off = 0;
    for (const auto& [id, width] : layout) {
      t.accumulate(id, t.grad(self).middleCols(off, width));
      off += width;
    }
  });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || start + count > a.cols()) throw ContractError("slice_cols: out of range");
  const int ia = a.id();
  const Eigen::Index rows = a.rows(), cols = a.cols();
  Matrix out = a.value().middleCols(start, count);
  return a.tape()->record(std::move(out), [ia, start, count, rows, cols](Tape& t, int self) {
    Matrix g = Matrix::Zero(rows, cols);
    g.middleCols(start, count) = t.grad(self);
    t.accumulate(ia, g);
  });
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || start + count > a.rows()) throw ContractError("slice_rows: out of range");
  const int ia = a.id();
  const Eigen::Index rows = a.rows(), cols = a.cols();
  Matrix out = a.value().middleRows(start, count);
  return a.tape()->record(std::move(out), [ia, start, count, rows, cols](Tape& t, int self) {
    Matrix g = Matrix::Zero(rows, cols);
    g.middleRows(start, count) = t.grad(self);
    t.accumulate(ia, g);
  });
}

Var broadcast_rows(Var a, Eigen::Index rows) {
  if (a.rows() != 1) throw ContractError("broadcast_rows: expects a single row");
  const int ia = a.id();
  Matrix out = a.value().replicate(rows, 1);
  return a.tape()->record(std::move(out),
                          [ia](Tape& t, int self) { t.accumulate(ia, t.grad(self).colwise().sum()); });
}

Var sum_rows(Var a) {
  const int ia = a.id();
  const Eigen::Index rows = a.rows();
  Matrix out = a.value().colwise().sum();
  return a.tape()->record(std::move(out), [ia, rows](Tape& t, int self) {
    t.accumulate(ia, t.grad(self).replicate(rows, 1));
  });
}

Var sum_cols(Var a) {
  const int ia = a.id();
  const Eigen::Index cols = a.cols();
  Matrix out = a.value().rowwise().sum();
  return a.tape()->record(std::move(out), [ia, cols](Tape& t, int self) {
    t.accumulate(ia, t.grad(self).replicate(1, cols));
  });
}

Var sum(Var a) {
  const int ia = a.id();
  const Eigen::Index rows = a.rows(), cols = a.cols();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape()->record(std::move(out), [ia, rows, cols](Tape& t, int self) {
    t.accumulate(ia, Matrix::Constant(rows, cols, t.grad(self)(0, 0)));
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

std::vector<Eigen::Index> canonical_row_order(const Matrix& x) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) order[static_cast<std::size_t>(i)] = i;
  std::stable_sort(order.begin(), order.end(), [&x](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (x(a, c) != x(b, c)) return x(a, c) < x(b, c);
    }
    return false;
  });
  return order;
}

Var mean_others(Var a) {
  const Eigen::Index r = a.rows();
  if (r < 2) throw ContractError("mean_others: needs at least two rows");
  const double inv = 1.0 / static_cast<double>(r - 1);
  const Matrix& x = a.value();
  const auto order = canonical_row_order(x);
  Matrix out = Matrix::Zero(r, x.cols());
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j : order) {
      if (j != i) out.row(i) += x.row(j);
    }
    out.row(i) *= inv;
  }
  const int ia = a.id();
  return a.tape()->record(std::move(out), [ia, r, inv](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    const Matrix total = g.colwise().sum();
    Matrix ga(r, g.cols());
    for (Eigen::Index j = 0; j < r; ++j) ga.row(j) = (total.row(0) - g.row(j)) * inv;
    t.accumulate(ia, ga);
  });
}

Var layer_norm(Var a, double eps) {
  const Matrix& x = a.value();
  const Eigen::Index r = x.rows(), c = x.cols();
  Matrix out(r, c);
  Eigen::VectorXd inv_std(r);
  for (Eigen::Index i = 0; i < r; ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    out.row(i) = (x.row(i).array() - mu) * inv_std(i);
  }
  const int ia = a.id();
  return a.tape()->record(std::move(out), [ia, inv_std](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    const Matrix& y = t.value(self);
    Matrix ga(g.rows(), g.cols());
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      const double mg = g.row(i).mean();
      const double mgy = g.row(i).cwiseProduct(y.row(i)).mean();
      ga.row(i) = inv_std(i) * (g.row(i).array() - mg - y.row(i).array() * mgy);
    }
    t.accumulate(ia, ga);
  });
}

Var log_softmax(Var a) {
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    const double lse = m + std::log((x.row(i).array() - m).exp().sum());
    out.row(i) = x.row(i).array() - lse;
  }
  const int ia = a.id();
  return a.tape()->record(std::move(out), [ia](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    const Matrix p = t.value(self).array().exp();
    Matrix ga(g.rows(), g.cols());
    for (Eigen::Index i = 0; i < g.rows(); ++i) ga.row(i) = g.row(i) - p.row(i) * g.row(i).sum();
    t.accumulate(ia, ga);
  });
}

Var pick(Var a, std::span<const int> index) {
  if (static_cast<Eigen::Index>(index.size()) != a.rows()) throw ContractError("pick: index count mismatch");
  Matrix out(a.rows(), 1);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    if (index[i] < 0 || index[i] >= a.cols()) throw ContractError("pick: index out of range");
    out(i, 0) = a.value()(i, index[i]);
  }
  const int ia = a.id();
  const Eigen::Index rows = a.rows(), cols = a.cols();
  std::vector<int> idx(index.begin(), index.end());
  return a.tape()->record(std::move(out), [ia, rows, cols, idx](Tape& t, int self) {
    Matrix g = Matrix::Zero(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) g(i, idx[i]) = t.grad(self)(i, 0);
    t.accumulate(ia, g);
  });
}

}  // namespace ad
}  // namespace metacpr
