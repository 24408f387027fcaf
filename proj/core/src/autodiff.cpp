#include "mbflow/autodiff.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "mbflow/error.hpp"

namespace mbflow::ad {

namespace {

void require_same_shape(Var a, Var b, const char* op) {
  if (a.tape() != b.tape()) throw Error(std::string(op) + ": operands live on different tapes");
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}

template <typename Fwd, typename Deriv>
Var unary(Var a, Fwd fwd, Deriv deriv) {
  Matrix out = a.value().unaryExpr(fwd);
  const Matrix* x = &a.value();
  return a.tape()->record(std::move(out), {a}, [x, deriv](const Matrix& g, std::span<Matrix* const> in) {
    if (in[0]) *in[0] += g.cwiseProduct(x->unaryExpr(deriv));
  });
}

}  // namespace

const Matrix& Var::value() const {
  if (!tape_) throw Error("autodiff: use of an empty Var");
  return tape_->value(*this);
}

double Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) throw Error("autodiff: scalar() on a non-scalar node");
  return v(0, 0);
}

void Tape::check_owned(Var v) const {
  if (v.tape() != this || v.id() < 0 || static_cast<size_t>(v.id()) >= nodes_.size()) {
    throw Error("autodiff: Var does not belong to this tape");
  }
}

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, false});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::variable(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, true});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(Matrix value, std::vector<Var> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  for (Var v : inputs) {
    check_owned(v);
    node.inputs.push_back(v.id());
    node.requires_grad = node.requires_grad || requires_grad(v);
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Matrix Tape::grad(Var v) const {
  check_owned(v);
  const Node& node = nodes_[static_cast<size_t>(v.id())];
  if (node.grad.size() == 0) return Matrix::Zero(node.value.rows(), node.value.cols());
  return node.grad;
}

void Tape::backward(Var root) {
  check_owned(root);
  if (swept_) throw Error("autodiff: backward() already ran on this tape");
  Node& r = nodes_[static_cast<size_t>(root.id())];
  if (r.value.rows() != 1 || r.value.cols() != 1) {
    throw Error("autodiff: backward() needs a scalar root, got " + std::to_string(r.value.rows()) + "x" +
                std::to_string(r.value.cols()));
  }
  swept_ = true;
  if (!r.requires_grad) return;
  r.grad = Matrix::Ones(1, 1);

  std::vector<Matrix*> slots;
  for (int id = root.id(); id >= 0; --id) {
    Node& node = nodes_[static_cast<size_t>(id)];
    if (!node.backward || node.grad.size() == 0) continue;
    slots.assign(node.inputs.size(), nullptr);
    for (size_t k = 0; k < node.inputs.size(); ++k) {
      Node& in = nodes_[static_cast<size_t>(node.inputs[k])];
      if (!in.requires_grad) continue;
      if (in.grad.size() == 0) in.grad = Matrix::Zero(in.value.rows(), in.value.cols());
      slots[k] = &in.grad;
    }
    node.backward(node.grad, slots);
  }
}

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  return a.tape()->record(a.value() + b.value(), {a, b}, [](const Matrix& g, std::span<Matrix* const> in) {
    if (in[0]) *in[0] += g;
    if (in[1]) *in[1] += g;
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  return a.tape()->record(a.value() - b.value(), {a, b}, [](const Matrix& g, std::span<Matrix* const> in) {
    if (in[0]) *in[0] += g;
    if (in[1]) *in[1] -= g;
  });
}

Var hadamard(Var a, Var b) {
  require_same_shape(a, b, "hadamard");
  const Matrix* x = &a.value();
  const Matrix* y = &b.value();
  return a.tape()->record(x->cwiseProduct(*y), {a, b}, [x, y](const Matrix& g, std::span<Matrix* const> in) {
    if (in[0]) *in[0] += g.cwiseProduct(*y);
    if (in[1]) *in[1] += g.cwiseProduct(*x);
  });
}

Var scale(Var a, double factor) {
  return a.tape()->record(a.value() * factor, {a}, [factor](const Matrix& g, std::span<Matrix* const> in) {
    if (in[0]) *in[0] += factor * g;
  });
}

Var add_scalar(Var a, double offset) {
  return a.tape()->record(a.value().array() + offset, {a}, [](const Matrix& g, std::span<Matrix* const> in) {
    if (in[0]) *in[0] += g;
  });
}

Var neg(Var a) { return scale(a, -1.0); }

Var add_rowwise(Var x, Var b) {
  if (x.tape() != b.tape()) throw Error("add_rowwise: operands live on different tapes");
  if (b.rows() != 1 || b.cols() != x.cols()) throw Error("add_rowwise: bias must be 1 x cols(x)");
  Matrix out = x.value();
  out.rowwise() += b.value().row(0);
  return x.tape()->record(std::move(out), {x, b}, [](const Matrix& g, std::span<Matrix* const> in) {
    if (in[0]) *in[0] += g;
    if (in[1]) *in[1] += g.colwise().sum();
  });
}

Var matmul(Var a, Var b) {
  if (a.tape() != b.tape()) throw Error("matmul: operands live on different tapes");
  if (a.cols() != b.rows()) {
    throw Error("matmul: inner dimensions differ (" + std::to_string(a.cols()) + " vs " +
                std::to_string(b.rows()) + ")");
  }
  const Matrix* x = &a.value();
  const Matrix* y = &b.value();
  Matrix out(x->rows(), y->cols());
  out.noalias() = (*x) * (*y);
  return a.tape()->record(std::move(out), {a, b}, [x, y](const Matrix& g, std::span<Matrix* const> in) {
    if (in[0]) in[0]->noalias() += g * y->transpose();
    if (in[1]) in[1]->noalias() += x->transpose() * g;
  });
}

Var div_scalar(Var a, Var s) {
  if (a.tape() != s.tape()) throw Error("div_scalar: operands live on different tapes");
  if (s.rows() != 1 || s.cols() != 1) throw Error("div_scalar: divisor must be 1x1");
  const double d = s.value()(0, 0);
  if (d == 0.0) throw Error("div_scalar: division by zero");
  const Matrix* x = &a.value();
  return a.tape()->record(*x / d, {a, s}, [x, d](const Matrix& g, std::span<Matrix* const> in) {
    if (in[0]) *in[0] += g / d;
    if (in[1]) (*in[1])(0, 0) -= g.cwiseProduct(*x).sum() / (d * d);
  });
}

Var relu(Var a) {
  return unary(
      a, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Var gelu(Var a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return unary(
      a, [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [inv_sqrt_2pi](double v) {
        return 0.5 * (1.0 + std::erf(v * kInvSqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
      });
}

Var sine(Var a) {
  return unary(
      a, [](double v) { return std::sin(v); }, [](double v) { return std::cos(v); });
}

Var square(Var a) {
  return unary(
      a, [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}

Var sqrt(Var a) {
  if ((a.value().array() < 0.0).any()) throw Error("sqrt: negative argument");
  // Zero arguments get a zero slope instead of an infinite one.
  return unary(
      a, [](double v) { return std::sqrt(v); }, [](double v) { return v > 0.0 ? 0.5 / std::sqrt(v) : 0.0; });
}

Var log(Var a) {
  const Matrix* x = &a.value();
  if ((x->array() <= 0.0).any()) throw Error("log: non-positive argument");
  return a.tape()->record(x->array().log().matrix(), {a}, [x](const Matrix& g, std::span<Matrix* const> in) {
    if (in[0]) *in[0] += g.cwiseQuotient(*x);
  });
}

Var clamp_min(Var a, double floor) {
  return unary(
      a, [floor](double v) { return v > floor ? v : floor; },
      [floor](double v) { return v > floor ? 1.0 : 0.0; });
}

Var sum(Var a) {
  return a.tape()->record(Matrix::Constant(1, 1, a.value().sum()), {a},
                          [](const Matrix& g, std::span<Matrix* const> in) {
                            if (in[0]) in[0]->array() += g(0, 0);
                          });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw Error("mean: empty operand");
  return a.tape()->record(Matrix::Constant(1, 1, a.value().sum() / n), {a},
                          [n](const Matrix& g, std::span<Matrix* const> in) {
                            if (in[0]) in[0]->array() += g(0, 0) / n;
                          });
}

Var gather_rows(Var a, std::span<const Index> rows) {
  const Matrix& x = a.value();
  Matrix out(static_cast<Index>(rows.size()), x.cols());
  for (size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] < 0 || rows[k] >= x.rows()) throw Error("gather_rows: index out of range");
    out.row(static_cast<Index>(k)) = x.row(rows[k]);
  }
  std::vector<Index> idx(rows.begin(), rows.end());
  return a.tape()->record(std::move(out), {a}, [idx = std::move(idx)](const Matrix& g, std::span<Matrix* const> in) {
    if (!in[0]) return;
    for (size_t k = 0; k < idx.size(); ++k) in[0]->row(idx[k]) += g.row(static_cast<Index>(k));
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error("concat_cols: no operands");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (Var p : parts) {
    if (p.tape() != parts.front().tape()) throw Error("concat_cols: operands live on different tapes");
    if (p.rows() != rows) throw Error("concat_cols: row counts differ");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<Index> offsets;
  Index c = 0;
  for (Var p : parts) {
    offsets.push_back(c);
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return parts.front().tape()->record(std::move(out), parts,
                                      [offsets](const Matrix& g, std::span<Matrix* const> in) {
                                        for (size_t k = 0; k < in.size(); ++k) {
                                          if (in[k]) *in[k] += g.middleCols(offsets[k], in[k]->cols());
                                        }
                                      });
}

Var stop_gradient(Var a) { return a.tape()->constant(a.value()); }

}  // namespace mbflow::ad
