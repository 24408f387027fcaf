#pragma once

#include <Eigen/Core>

#include <deque>
#include <functional>
#include <span>
#include <vector>

namespace mbflow::ad {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; only valid while the
/// tape that produced it is alive.
class Var {
 public:
  Var() = default;

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  /// Value of a 1x1 node.
  double scalar() const;

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Linear record of matrix-valued operations, differentiated by a single
/// reverse sweep from a scalar root.
///
/// A backward function receives the gradient flowing into its node and one
/// slot per input. Slots of inputs that do not depend on any variable are
/// null; the others are pre-sized and must be accumulated into (+=).
class Tape {
 public:
  using BackwardFn = std::function<void(const Matrix& grad, std::span<Matrix* const> input_grads)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var variable(Matrix value);
  Var record(Matrix value, std::vector<Var> inputs, BackwardFn backward);

  const Matrix& value(Var v) const { return nodes_[static_cast<size_t>(v.id())].value; }
  bool requires_grad(Var v) const { return nodes_[static_cast<size_t>(v.id())].requires_grad; }
  /// Gradient accumulated by backward(); a zero matrix if nothing reached v.
  Matrix grad(Var v) const;

  /// Throws unless root is 1x1. May be called once per tape.
  void backward(Var root);

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::vector<int> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  void check_owned(Var v) const;

  std::deque<Node> nodes_;
  bool swept_ = false;
};

// Elementwise and structural operations. Shapes must match exactly unless
// noted; violations throw mbflow::Error.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);
Var neg(Var a);
/// x (n x k) plus row vector b (1 x k) broadcast over rows.
Var add_rowwise(Var x, Var b);
Var matmul(Var a, Var b);
/// a divided by the 1x1 node s.
Var div_scalar(Var a, Var s);
Var relu(Var a);
Var gelu(Var a);
Var sine(Var a);
Var square(Var a);
Var sqrt(Var a);
Var log(Var a);
/// max(a, floor) elementwise; gradient is zero where the floor is active.
Var clamp_min(Var a, double floor);
Var sum(Var a);
Var mean(Var a);
Var gather_rows(Var a, std::span<const Index> rows);
Var concat_cols(const std::vector<Var>& parts);
/// Detached copy: same value, no gradient path.
Var stop_gradient(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator*(double k, Var a) { return scale(a, k); }

}  // namespace mbflow::ad
