// Copyright 2026 The canonpolicy Authors
// SPDX-License-Identifier: Apache-2.0

#include <array>
#include <random>

#include <gtest/gtest.h>

#include "canonpolicy/autodiff.hpp"
#include "gradcheck_util.hpp"

namespace cpol::ad {
namespace {

using testing::gradcheck;
using testing::random_params;

constexpr double kTol = 1e-6;

TEST(ParamSet, FlatRoundTripAndArithmetic) {
  std::mt19937_64 rng(1);
  ParamSet ps = random_params(rng, {{2, 3}, {1, 4}});
  EXPECT_EQ(ps.num_scalars(), 10u);
  const Eigen::VectorXd f = ps.flat();
  EXPECT_EQ(f[3], ps[0](1, 0));  // row-major order within a tensor
  ParamSet z = ps.zeros_like();
  EXPECT_EQ(z.flat().norm(), 0.0);
  z += ps;
  EXPECT_EQ(z, ps);
  z.set_flat(Eigen::VectorXd::Ones(10));
  EXPECT_EQ(z[1](0, 3), 1.0);
  EXPECT_THROW(z.set_flat(Eigen::VectorXd::Ones(9)), Error);
}

TEST(Tape, ShapeMismatchThrows) {
  Tape t;
  const Var a = t.constant(Matrix::Ones(2, 3));
  const Var b = t.constant(Matrix::Ones(2, 3));
  EXPECT_THROW(matmul(t, a, b), Error);
  EXPECT_THROW(add(t, a, t.constant(Matrix::Ones(3, 2))), Error);
}

TEST(Tape, ConstantsCarryNoGradient) {
  Tape t;
  const Var a = t.constant(Matrix::Ones(2, 2));
  const Var s = sum(t, silu(t, a));
  EXPECT_FALSE(t.requires_grad(s));
  EXPECT_NO_THROW(t.backward(s));
}

TEST(Tape, GradientsAccumulateAcrossUses) {
  ParamSet ps;
  ps.add("x", 1, 1);
  ps[0](0, 0) = 3.0;
  ParamSet g = ps.zeros_like();
  Tape t;
  const Var x = t.param(ps, 0, &g);
  t.backward(mul(t, x, x));
  EXPECT_DOUBLE_EQ(g[0](0, 0), 6.0);
}

TEST(GradCheck, Matmul) {
  std::mt19937_64 rng(2);
  EXPECT_LT(gradcheck(random_params(rng, {{3, 4}, {4, 2}}),
                      [](Tape& t, const std::vector<Var>& v) { return matmul(t, v[0], v[1]); }),
            kTol);
}

TEST(GradCheck, Elementwise) {
  std::mt19937_64 rng(3);
  const ParamSet ps = random_params(rng, {{3, 4}, {3, 4}, {1, 4}});
  EXPECT_LT(gradcheck(ps, [](Tape& t, const std::vector<Var>& v) { return add(t, v[0], v[1]); }), kTol);
  EXPECT_LT(gradcheck(ps, [](Tape& t, const std::vector<Var>& v) { return sub(t, v[0], v[1]); }), kTol);
  EXPECT_LT(gradcheck(ps, [](Tape& t, const std::vector<Var>& v) { return mul(t, v[0], v[1]); }), kTol);
  EXPECT_LT(gradcheck(ps, [](Tape& t, const std::vector<Var>& v) { return scale(t, v[0], -2.5); }), kTol);
  EXPECT_LT(gradcheck(ps, [](Tape& t, const std::vector<Var>& v) { return add_row(t, v[0], v[2]); }), kTol);
  EXPECT_LT(gradcheck(ps, [](Tape& t, const std::vector<Var>& v) { return mul_row(t, v[0], v[2]); }), kTol);
  EXPECT_LT(gradcheck(ps, [](Tape& t, const std::vector<Var>& v) { return silu(t, v[0]); }), kTol);
  EXPECT_LT(gradcheck(ps, [](Tape& t, const std::vector<Var>& v) { return tanh(t, v[0]); }), kTol);
  EXPECT_LT(gradcheck(ps, [](Tape& t, const std::vector<Var>& v) { return transpose(t, v[0]); }), kTol);
  EXPECT_LT(gradcheck(ps,
                      [](Tape& t, const std::vector<Var>& v) {
                        return log(t, add(t, mul(t, v[0], v[0]), t.constant(Matrix::Constant(3, 4, 0.1))));
                      }),
            kTol);
  Eigen::RowVectorXd shift(4), m(4);
  shift << 1, 2, 3, 4;
  m << 0.5, -1, 2, 0.25;
  EXPECT_LT(gradcheck(ps, [&](Tape& t, const std::vector<Var>& v) { return affine_const(t, v[0], shift, m); }),
            kTol);
}

TEST(GradCheck, Structural) {
  std::mt19937_64 rng(4);
  const ParamSet ps = random_params(rng, {{3, 4}, {3, 2}, {2, 4}});
  EXPECT_LT(gradcheck(ps,
                      [](Tape& t, const std::vector<Var>& v) {
                        const std::array<Var, 2> parts{v[0], v[1]};
                        return concat_cols(t, parts);
                      }),
            kTol);
  EXPECT_LT(gradcheck(ps,
                      [](Tape& t, const std::vector<Var>& v) {
                        const std::array<Var, 2> parts{v[0], v[2]};
                        return concat_rows(t, parts);
                      }),
            kTol);
  EXPECT_LT(gradcheck(ps, [](Tape& t, const std::vector<Var>& v) { return slice_cols(t, v[0], 1, 2); }), kTol);
  EXPECT_LT(gradcheck(ps, [](Tape& t, const std::vector<Var>& v) { return slice_rows(t, v[0], 1, 2); }), kTol);
  EXPECT_LT(gradcheck(ps, [](Tape& t, const std::vector<Var>& v) { return reshape(t, v[0], 2, 6); }), kTol);
  EXPECT_LT(gradcheck(ps, [](Tape& t, const std::vector<Var>& v) { return max_rows(t, v[0]); }), kTol);
  EXPECT_LT(gradcheck(ps, [](Tape& t, const std::vector<Var>& v) { return mean_rows(t, v[0]); }), kTol);
}

TEST(GradCheck, Reductions) {
  std::mt19937_64 rng(5);
  const ParamSet ps = random_params(rng, {{3, 4}, {3, 4}});
  EXPECT_LT(gradcheck(ps, [](Tape& t, const std::vector<Var>& v) { return mse(t, v[0], v[1]); }), kTol);
  EXPECT_LT(gradcheck(ps, [](Tape& t, const std::vector<Var>& v) { return sum(t, v[0]); }), kTol);
}

TEST(Ops, ReshapeIsRowMajorAndMaxTiesFirst) {
  Tape t;
  Matrix a(2, 3);
  a << 1, 2, 3, 4, 5, 6;
  const Matrix r = t.value(reshape(t, t.constant(a), 3, 2));
  EXPECT_EQ(r(0, 1), 2);
  EXPECT_EQ(r(1, 0), 3);
  EXPECT_EQ(flatten_row_major(a)(3), 4);

  ParamSet ps;
  ps.add("x", 2, 1);
  ps[0] << 7, 7;
  ParamSet g = ps.zeros_like();
  Tape t2;
  t2.backward(sum(t2, max_rows(t2, t2.param(ps, 0, &g))));
  EXPECT_EQ(g[0](0, 0), 1.0);
  EXPECT_EQ(g[0](1, 0), 0.0);
}

}  // namespace
}  // namespace cpol::ad
