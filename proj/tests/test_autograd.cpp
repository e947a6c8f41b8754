#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "sapl/autograd.hpp"
#include "sapl/optim.hpp"

using namespace sapl;
using namespace sapl::ag;
using sapl::testing::max_gradient_error;
using sapl::testing::random_matrix;

namespace {

constexpr double kTol = 1e-6;

// Contracts an arbitrary output with fixed random weights so every entry of
// the output gradient is distinct.
Var project(Tape& t, const Var& v, unsigned seed = 99) {
  return sum_all(hadamard(v, t.constant(random_matrix(int(v.rows()), int(v.cols()), seed))));
}

struct Fixture {
  Parameter a{"a", random_matrix(3, 4, 1)};
  Parameter b{"b", random_matrix(4, 5, 2)};
  Parameter c{"c", random_matrix(3, 4, 3)};
  Parameter row{"row", random_matrix(1, 4, 4)};
  Parameter col{"col", random_matrix(3, 1, 5)};
};

}  // namespace

TEST(Gradient, Matmul) {
  Fixture f;
  EXPECT_LT(max_gradient_error({&f.a, &f.b}, [&](Tape& t) { return project(t, matmul(t.param(f.a), t.param(f.b))); }),
            kTol);
  EXPECT_LT(max_gradient_error({&f.a, &f.c},
                               [&](Tape& t) { return project(t, matmul_nt(t.param(f.a), t.param(f.c))); }),
            kTol);
}

TEST(Gradient, Elementwise) {
  Fixture f;
  EXPECT_LT(max_gradient_error({&f.a, &f.c},
                               [&](Tape& t) {
                                 Var x = t.param(f.a), y = t.param(f.c);
                                 return project(t, add(sub(hadamard(x, y), scale(x, 0.3)), y));
                               }),
            kTol);
}

TEST(Gradient, Broadcasts) {
  Fixture f;
  EXPECT_LT(max_gradient_error({&f.a, &f.row, &f.col},
                               [&](Tape& t) {
                                 return project(t, scale_rows(add_row(t.param(f.a), t.param(f.row)), t.param(f.col)));
                               }),
            kTol);
  Parameter bias{"bias", random_matrix(1, 5, 8)};
  EXPECT_LT(max_gradient_error({&f.a, &f.b, &bias},
                               [&](Tape& t) { return project(t, linear(t.param(f.a), t.param(f.b), t.param(bias))); }),
            kTol);
}

TEST(Gradient, Shapes) {
  Fixture f;
  EXPECT_LT(max_gradient_error({&f.a, &f.c},
                               [&](Tape& t) {
                                 Var x = t.param(f.a), y = t.param(f.c);
                                 std::vector<Var> rows{x, slice_rows(y, 1, 2)};
                                 std::vector<Var> cols{slice_cols(x, 0, 2), y};
                                 const std::vector<Index> pick{2, 0, 2};
                                 Var s = add(sum_all(project(t, concat_rows(rows), 7)),
                                             project(t, concat_cols(cols), 8));
                                 std::vector<Var> terms{s, project(t, gather_rows(x, pick), 9), element(y, 2, 3),
                                                        mean_all(x)};
                                 return add_n(terms);
                               }),
            kTol);
}

TEST(Gradient, LayerNormAndGelu) {
  Fixture f;
  Parameter g{"g", random_matrix(1, 4, 11)}, bt{"bt", random_matrix(1, 4, 12)};
  EXPECT_LT(max_gradient_error({&f.a, &g, &bt},
                               [&](Tape& t) {
                                 return project(t, quick_gelu(layer_norm(t.param(f.a), t.param(g), t.param(bt))));
                               }),
            kTol);
}

TEST(Gradient, Softmaxes) {
  Parameter x{"x", random_matrix(4, 4, 13, 2.0)};
  EXPECT_LT(max_gradient_error({&x}, [&](Tape& t) { return project(t, softmax_rows(t.param(x))); }), kTol);
  EXPECT_LT(max_gradient_error({&x}, [&](Tape& t) { return project(t, softmax_rows(t.param(x), true)); }), kTol);
  Matrix allowed = Matrix::Ones(4, 4);
  allowed(0, 1) = allowed(2, 3) = allowed(3, 0) = 0;
  EXPECT_LT(max_gradient_error({&x}, [&](Tape& t) { return project(t, softmax_rows_masked(t.param(x), allowed)); }),
            kTol);
  EXPECT_LT(max_gradient_error({&x}, [&](Tape& t) { return project(t, logsumexp_rows(t.param(x))); }), kTol);
  EXPECT_LT(max_gradient_error({&x}, [&](Tape& t) { return project(t, l2_normalize_rows(t.param(x))); }), kTol);
}

TEST(Forward, SoftmaxValues) {
  Tape t;
  Matrix m(1, 3);
  m << 1000.0, 1000.0, 1000.0 + std::log(2.0);
  const Matrix s = softmax_rows(t.constant(m)).value();
  EXPECT_NEAR(s(0, 0), 0.25, 1e-12);
  EXPECT_NEAR(s(0, 2), 0.5, 1e-12);
  EXPECT_NEAR(logsumexp_rows(t.constant(m)).value()(0, 0), 1000.0 + std::log(4.0), 1e-9);
  Matrix allowed(1, 3);
  allowed << 1, 0, 1;
  const Matrix sm = softmax_rows_masked(t.constant(m), allowed).value();
  EXPECT_EQ(sm(0, 1), 0.0);
  EXPECT_NEAR(sm(0, 0), 1.0 / 3.0, 1e-12);
  const Matrix c = softmax_rows(t.constant(Matrix::Zero(3, 3)), true).value();
  EXPECT_EQ(c(0, 1), 0.0);
  EXPECT_NEAR(c(1, 0), 0.5, 1e-12);
}

TEST(Forward, FrozenParameterGetsNoGradient) {
  Parameter frozen{"w", random_matrix(2, 2, 1), false};
  Parameter live{"v", random_matrix(2, 2, 2)};
  Tape t;
  Var w = t.param(frozen);
  EXPECT_FALSE(w.requires_grad());
  t.backward(sum_all(matmul(w, t.param(live))));
  EXPECT_EQ(frozen.grad.size() == 0 || frozen.grad.isZero(), true);
  EXPECT_FALSE(live.grad.isZero());
}

TEST(Forward, BackwardRequiresScalarRoot) {
  Parameter p{"p", random_matrix(2, 2, 1)};
  Tape t;
  EXPECT_THROW(t.backward(t.param(p)), std::logic_error);
}

TEST(Optim, ClipScalesToMaxNorm) {
  Parameter a{"a", Matrix::Zero(1, 2)}, b{"b", Matrix::Zero(1, 1)};
  a.grad = Matrix(1, 2);
  a.grad << 3.0, 0.0;
  b.grad = Matrix::Constant(1, 1, 4.0);
  EXPECT_DOUBLE_EQ(clip_grad_norm({&a, &b}, 1.0), 5.0);
  EXPECT_NEAR(a.grad(0, 0), 0.6, 1e-12);
  EXPECT_NEAR(b.grad(0, 0), 0.8, 1e-12);
  EXPECT_NEAR(clip_grad_norm({&a, &b}, 10.0), 1.0, 1e-12);
  EXPECT_NEAR(a.grad(0, 0), 0.6, 1e-12);
}

TEST(Optim, AdamWFirstStep) {
  Parameter p{"p", Matrix::Constant(1, 2, 1.0)};
  p.grad = Matrix(1, 2);
  p.grad << 0.5, -2.0;
  AdamW opt({&p}, {0.1, 0.9, 0.999, 1e-8, 0.01});
  opt.step();
  // First bias-corrected step is lr * sign(g); decay is decoupled.
  EXPECT_NEAR(p.value(0, 0), 1.0 - 0.1 * 0.01 * 1.0 - 0.1, 1e-6);
  EXPECT_NEAR(p.value(0, 1), 1.0 - 0.1 * 0.01 * 1.0 + 0.1, 1e-6);
  EXPECT_EQ(opt.steps(), 1);
}

TEST(Optim, AdamWSkipsFrozen) {
  Parameter p{"p", Matrix::Constant(1, 1, 1.0), false};
  p.grad = Matrix::Constant(1, 1, 1.0);
  AdamW opt({&p}, {});
  opt.step();
  EXPECT_EQ(p.value(0, 0), 1.0);
}
