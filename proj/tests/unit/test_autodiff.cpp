#include <gtest/gtest.h>

#include "mbflow/autodiff.hpp"
#include "mbflow/error.hpp"
#include "support.hpp"

namespace mbflow {
namespace {

using ad::Matrix;
using ad::Tape;
using ad::Var;

Matrix random_matrix(Index r, Index c, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (Index k = 0; k < m.size(); ++k) m.data()[k] = u(rng);
  return m;
}

/// Checks d f / d x against central differences, f built by `build` on a fresh tape.
void check_gradient(const std::function<Var(Var)>& build, const Matrix& x, double tol = 1e-7) {
  Tape tape;
  const Var xv = tape.variable(x);
  tape.backward(build(xv));
  const Matrix g = tape.grad(xv);
  const Eigen::VectorXd flat = Eigen::Map<const Eigen::VectorXd>(x.data(), x.size());
  const auto f = [&](const Eigen::VectorXd& v) {
    Tape t;
    Matrix m = Eigen::Map<const Matrix>(v.data(), x.rows(), x.cols());
    return build(t.variable(m)).scalar();
  };
  const Eigen::VectorXd fd = testing::finite_gradient(f, flat, 1e-6);
  const Eigen::VectorXd ad_flat = Eigen::Map<const Eigen::VectorXd>(g.data(), g.size());
  EXPECT_LT(testing::max_relative_error(ad_flat, fd), tol);
}

TEST(Tape, ConstantLossHasZeroGradient) {
  Tape tape;
  const Var x = tape.variable(random_matrix(3, 2, 1));
  const Var c = tape.constant(Matrix::Constant(1, 1, 4.0));
  const Var loss = add(scale(sum(x), 0.0), c);
  tape.backward(loss);
  EXPECT_EQ(tape.grad(x), Matrix::Zero(3, 2));
}

TEST(Tape, SumOfSquaresGivesTwiceTheInput) {
  const Matrix theta = random_matrix(5, 1, 2);
  Tape tape;
  const Var x = tape.variable(theta);
  tape.backward(sum(square(x)));
  EXPECT_LT((tape.grad(x) - 2.0 * theta).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Tape, NonScalarRootThrows) {
  Tape tape;
  const Var x = tape.variable(random_matrix(2, 2, 3));
  EXPECT_THROW(tape.backward(x), Error);
}

TEST(Tape, SecondBackwardThrows) {
  Tape tape;
  const Var x = tape.variable(random_matrix(2, 2, 3));
  const Var s = sum(x);
  tape.backward(s);
  EXPECT_THROW(tape.backward(s), Error);
}

TEST(Tape, ShapeMismatchThrows) {
  Tape tape;
  const Var a = tape.variable(random_matrix(2, 3, 4));
  const Var b = tape.variable(random_matrix(3, 2, 5));
  EXPECT_THROW(add(a, b), Error);
  EXPECT_THROW(matmul(a, a), Error);
}

TEST(Tape, LogOfNonPositiveThrows) {
  Tape tape;
  EXPECT_THROW(ad::log(tape.variable(Matrix::Constant(1, 1, 0.0))), Error);
}

TEST(Tape, ReusedNodeAccumulates) {
  Tape tape;
  const Var x = tape.variable(Matrix::Constant(1, 1, 3.0));
  tape.backward(hadamard(x, x) + x);  // x^2 + x
  EXPECT_DOUBLE_EQ(tape.grad(x)(0, 0), 7.0);
}

TEST(Ops, ElementwiseGradients) {
  const Matrix x = random_matrix(4, 3, 6);
  check_gradient([](Var v) { return sum(ad::relu(v)); }, x);
  check_gradient([](Var v) { return sum(ad::gelu(v)); }, x);
  check_gradient([](Var v) { return sum(ad::sine(scale(v, 3.0))); }, x);
  check_gradient([](Var v) { return mean(square(add_scalar(v, 0.5))); }, x);
  check_gradient([](Var v) { return sum(neg(v) - scale(v, 2.0)); }, x);
}

TEST(Ops, PositiveDomainGradients) {
  const Matrix x = random_matrix(3, 3, 7, 0.5, 2.0);
  check_gradient([](Var v) { return sum(ad::sqrt(v)); }, x);
  check_gradient([](Var v) { return sum(ad::log(v)); }, x);
  check_gradient([](Var v) { return sum(ad::clamp_min(v, 1.0)); }, x);
}

TEST(Ops, StructuralGradients) {
  const Matrix x = random_matrix(4, 3, 8);
  const Matrix w = random_matrix(3, 5, 9);
  const Matrix b = random_matrix(1, 5, 10);
  check_gradient(
      [&](Var v) {
        Tape& t = *v.tape();
        return sum(square(add_rowwise(matmul(v, t.constant(w)), t.constant(b))));
      },
      x);
  check_gradient(
      [&](Var v) {
        Tape& t = *v.tape();
        return sum(square(add_rowwise(matmul(t.constant(x), v), t.constant(b))));
      },
      w);
  check_gradient(
      [&](Var v) {
        Tape& t = *v.tape();
        return sum(square(add_rowwise(matmul(t.constant(x), t.constant(w)), v)));
      },
      b);
  const std::vector<Index> rows = {3, 0, 0, 2};
  check_gradient([&](Var v) { return sum(square(gather_rows(v, rows))); }, x);
  check_gradient([&](Var v) { return ad::sum(ad::square(ad::concat_cols({v, ad::scale(v, 2.0)}))); }, x);
  check_gradient([&](Var v) { return sum(div_scalar(v, add_scalar(sum(square(v)), 1.0))); }, x);
}

TEST(Ops, StopGradientDetaches) {
  Tape tape;
  const Var x = tape.variable(Matrix::Constant(2, 2, 1.5));
  tape.backward(sum(hadamard(ad::stop_gradient(x), x)));
  EXPECT_EQ(tape.grad(x), Matrix::Constant(2, 2, 1.5));
}

TEST(Ops, SqrtHasZeroSlopeAtZero) {
  Tape tape;
  const Var x = tape.variable(Matrix::Zero(1, 1));
  tape.backward(sum(ad::sqrt(x)));
  EXPECT_EQ(tape.grad(x)(0, 0), 0.0);
}

}  // namespace
}  // namespace mbflow
