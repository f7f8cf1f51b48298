#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. Rows are the batch axis (one row per agent), columns are
// features. A Tape records every operation; backward() sweeps the tape in
// reverse creation order from a scalar root.

#include <Eigen/Core>

#include <deque>
#include <functional>
#include <map>
#include <span>
#include <utility>
#include <vector>

namespace metacpr {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// The three independently-updated parameter groups.
enum class Group : int { policy = 0, critic = 1, cpr = 2 };

inline constexpr int kNumGroups = 3;

const char* group_name(Group g);

namespace ad {

class Tape;

/// Handle to a node on a tape. Cheap to copy; only valid while its tape lives
/// and has not been cleared.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  /// Value of a 1x1 node.
  double scalar() const { return value()(0, 0); }

  int id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var constant(double value);

  /// Leaf for parameter `index` of `group`. Repeated calls with the same key
  /// return the same node so gradients accumulate in one place.
  Var parameter(Group group, int index, const Matrix& value);

  /// Records an operation result. `fn` is called during backward() with the
  /// tape and the new node's id; it must only accumulate into parents.
  Var record(Matrix value, Backward fn);

  /// Clears all gradients, seeds d(root)/d(root) = 1 and propagates.
  void backward(Var root);

  const Matrix& value(int id) const { return nodes_[id].value; }
  const Matrix& grad(int id) const { return nodes_[id].grad; }
  bool has_grad(int id) const { return nodes_[id].has_grad; }

  /// Adds `g` to the gradient of node `id`.
  template <typename Expr>
  void accumulate(int id, const Expr& g) {
    Node& n = nodes_[id];
    if (n.has_grad) {
      n.grad += g;
    } else {
      n.grad = g;
      n.has_grad = true;
    }
  }

  /// Gradient of the last backward() root w.r.t. a parameter; zeros of the
  /// parameter's shape when no path reached it.
  Matrix parameter_grad(Group group, int index) const;
  bool parameter_reached(Group group, int index) const;
  bool has_parameter(Group group, int index) const;

  std::size_t size() const { return nodes_.size(); }
  void clear();

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool has_grad = false;
    Backward backward;
  };

  std::deque<Node> nodes_;
  std::map<std::pair<int, int>, int> params_;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }

// ---- operations -------------------------------------------------------------

Var detach(Var a);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
/// a[r x c] + b[1 x c] broadcast over rows.
Var add_row(Var a, Var b);
/// a[r x c] * b[1 x c] broadcast over rows.
Var mul_row(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var neg(Var a);

/// x[r x in] * w[in x out].
Var matmul(Var x, Var w);
/// x * w + b with b[1 x out] broadcast over rows.
Var affine(Var x, Var w, Var b);

Var tanh(Var a);
Var sigmoid(Var a);
Var softplus(Var a);
Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var square(Var a);
Var reciprocal(Var a);
/// Elementwise clamp; gradient is zero where the bound is active.
Var clamp(Var a, double lo, double hi);

Var concat_cols(std::span<const Var> parts);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
/// Repeats a single row `rows` times.
Var broadcast_rows(Var a, Eigen::Index rows);

/// Column sums: [r x c] -> [1 x c].
Var sum_rows(Var a);
/// Row sums: [r x c] -> [r x 1].
Var sum_cols(Var a);
Var sum(Var a);
Var mean(Var a);

/// Row indices sorted lexicographically by row contents (stable for ties).
std::vector<Eigen::Index> canonical_row_order(const Matrix& x);

/// out[i] = mean over j != i of a[j]. Rows are summed in canonical_row_order,
/// so permuting the rows of `a` permutes the output rows bit-exactly.
/// Requires r >= 2.
Var mean_others(Var a);

/// Per-row standardization to zero mean, unit variance (population variance).
Var layer_norm(Var a, double eps);
Var log_softmax(Var a);
/// out[i] = a[i, index[i]] as an [r x 1] column.
Var pick(Var a, std::span<const int> index);

}  // namespace ad
}  // namespace metacpr
