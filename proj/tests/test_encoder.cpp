// Copyright 2026 The canonpolicy Authors
// SPDX-License-Identifier: Apache-2.0

#include <numeric>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "canonpolicy/encoder.hpp"
#include "canonpolicy/vn.hpp"
#include "test_util.hpp"

namespace cpol {
namespace {

using testing::random_cloud;

EncoderConfig small_cfg() {
  EncoderConfig c;
  c.q = 4;
  c.widths = {8, 12};
  c.out_dim = 6;
  return c;
}

const Eigen::RowVector3d kOnes = Eigen::RowVector3d::Ones();
const Eigen::RowVector3d kZeros = Eigen::RowVector3d::Zero();

TEST(EncoderConfig, Validation) {
  EncoderConfig c;
  EXPECT_EQ(c.input_dim(), 33);
  c.widths.clear();
  EXPECT_THROW(c.validate(), Error);
  c = EncoderConfig{};
  c.q = 0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(GeometricAffine, NormalizedNeighborhoods) {
  std::mt19937_64 rng(1);
  const PointCloud x = random_cloud(rng, 50);
  const KnnGraph g = knn_graph(x, 10);
  const ad::Matrix f = geometric_affine(x, g, kOnes, kZeros);
  ASSERT_EQ(f.rows(), 50);
  ASSERT_EQ(f.cols(), 30);
  for (Eigen::Index i = 0; i < 50; ++i) {
    const Eigen::RowVectorXd row = f.row(i);
    const Eigen::Map<const Eigen::Matrix<double, 10, 3, Eigen::RowMajor>> blk(row.data());
    EXPECT_LT(blk.colwise().mean().cwiseAbs().maxCoeff(), 1e-10);
    // The 1e-8 guard shrinks the std to s / (s + 1e-8) for raw spread s.
    Eigen::Matrix<double, 10, 3> raw;
    for (int k = 0; k < 10; ++k) raw.row(k) = x.points().row(g(i, k));
    const double s = std::sqrt((raw.rowwise() - raw.colwise().mean()).array().square().mean());
    EXPECT_NEAR(std::sqrt(blk.array().square().mean()), s / (s + 1e-8), 1e-12);
    EXPECT_NEAR(std::sqrt(blk.array().square().mean()), 1.0, 1e-8 / s + 1e-12);
  }
}

TEST(GeometricAffine, CoincidentNeighborsGiveBeta) {
  PointMatrix p = PointMatrix::Zero(6, 3);
  const PointCloud x(p);
  const Eigen::RowVector3d beta(0.5, -1.0, 2.0);
  const ad::Matrix f = geometric_affine(x, knn_graph(x, 3), Eigen::RowVector3d(2, 3, 4), beta);
  for (Eigen::Index i = 0; i < 6; ++i) {
    for (int k = 0; k < 3; ++k) {
      for (int a = 0; a < 3; ++a) EXPECT_EQ(f(i, 3 * k + a), beta(a));
    }
  }
}

TEST(GeometricAffine, TranslationInvariant) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const PointCloud x = random_cloud(rng, 30);
    const PointCloud y = transform(x, {Rotation(), testing::random_vec(rng, 3.0)});
    const Eigen::RowVector3d al(1.5, 0.5, -1), be(0.1, 0.2, 0.3);
    const ad::Matrix fx = geometric_affine(x, knn_graph(x, 5), al, be);
    const ad::Matrix fy = geometric_affine(y, knn_graph(y, 5), al, be);
    EXPECT_LT((fx - fy).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Encode, PermutationInvariantBitwise) {
  std::mt19937_64 rng(3);
  const EncoderParams params = EncoderParams::init(EncoderConfig{}, 4);
  const PointCloud x = random_cloud(rng, 64);
  std::vector<Eigen::Index> perm(64);
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  PointMatrix p(64, 3);
  for (Eigen::Index i = 0; i < 64; ++i) p.row(i) = x.points().row(perm[static_cast<std::size_t>(i)]);
  const SceneFeature a = encode(x, params);
  const SceneFeature b = encode(PointCloud(p), params);
  ASSERT_EQ(a.vec.size(), 128);
  EXPECT_EQ(a.vec, b.vec);
  EXPECT_EQ(encode(x, params).vec, a.vec);
  EXPECT_TRUE(a.vec.allFinite());
}

TEST(Encode, TooFewPoints) {
  std::mt19937_64 rng(4);
  EXPECT_THROW(encode(random_cloud(rng, 10), EncoderParams::init(EncoderConfig{}, 1)), Error);
}

double encode_loss(const PointCloud& x, const EncoderParams& params, const Eigen::RowVectorXd& w,
                   ad::ParamSet* grads) {
  ad::Tape t;
  const ad::Var f = enc::encode(t, t.constant(x.points()), params, grads);
  const ad::Var loss = ad::sum(t, ad::mul(t, f, t.constant(w)));
  if (grads) t.backward(loss);
  return t.value(loss)(0, 0);
}

TEST(Encode, TapeMatchesEagerAndGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(5);
  EncoderParams params = EncoderParams::init(small_cfg(), 6);
  // Nonzero biases and a non-trivial affine so every parameter gets exercised.
  std::normal_distribution<double> g(0.0, 0.3);
  for (std::size_t i = 0; i < params.weights.size(); ++i) {
    for (Eigen::Index j = 0; j < params.weights[i].size(); ++j) params.weights[i].data()[j] += g(rng);
  }
  const PointCloud x = random_cloud(rng, 16);
  {
    ad::Tape t;
    const ad::Var f = enc::encode(t, t.constant(x.points()), params, nullptr);
    EXPECT_LT((t.value(f) - encode(x, params).vec).cwiseAbs().maxCoeff(), 1e-12);
  }
  Eigen::RowVectorXd w(6);
  for (int i = 0; i < 6; ++i) w(i) = g(rng);
  ad::ParamSet grads = params.weights.zeros_like();
  encode_loss(x, params, w, &grads);
  const Eigen::VectorXd analytic = grads.flat();
  const Eigen::VectorXd x0 = params.weights.flat();
  std::vector<Eigen::Index> coords(static_cast<std::size_t>(x0.size()));
  std::iota(coords.begin(), coords.end(), Eigen::Index{0});
  EncoderParams work = params;
  const Eigen::VectorXd numeric = testing::finite_differences(
      [&](const Eigen::VectorXd& v) {
        work.weights.set_flat(v);
        return encode_loss(x, work, w, nullptr);
      },
      x0, coords, 1e-5);
  EXPECT_LT(testing::relative_error(analytic, numeric), 1e-4);
}

TEST(Encode, InputGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  const EncoderParams params = EncoderParams::init(small_cfg(), 8);
  const PointCloud x = random_cloud(rng, 16);
  Eigen::RowVectorXd w = Eigen::RowVectorXd::LinSpaced(6, -1.0, 1.0);
  ad::ParamSet pts;
  pts.add("x", 16, 3);
  pts[0] = x.points();
  auto loss = [&](const ad::ParamSet& p, ad::ParamSet* grads) {
    ad::Tape t;
    const ad::Var f = enc::encode(t, t.param(p, 0, grads), params, nullptr);
    const ad::Var l = ad::sum(t, ad::mul(t, f, t.constant(w)));
    if (grads) t.backward(l);
    return t.value(l)(0, 0);
  };
  ad::ParamSet grads = pts.zeros_like();
  loss(pts, &grads);
  std::vector<Eigen::Index> coords(48);
  std::iota(coords.begin(), coords.end(), Eigen::Index{0});
  ad::ParamSet work = pts;
  const Eigen::VectorXd numeric = testing::finite_differences(
      [&](const Eigen::VectorXd& v) {
        work.set_flat(v);
        return loss(work, nullptr);
      },
      pts.flat(), coords, 1e-5);
  EXPECT_LT(testing::relative_error(grads.flat(), numeric), 1e-4);
}

TEST(Encode, EquivalentCloudsGiveEqualFeaturesAfterCanonicalization) {
  std::mt19937_64 rng(9);
  const VNParams vn = VNParams::init(VNConfig{}, 10);
  const EncoderParams enc = EncoderParams::init(EncoderConfig{}, 11);
  const PointCloud x = random_cloud(rng, 64);
  const SceneFeature a = encode(estimate_rotation(x, vn).x_cn, enc);
  for (int trial = 0; trial < 10; ++trial) {
    const PointCloud y = transform(x, random_se3(rng, RotMode::kSO3, 2.0));
    const SceneFeature b = encode(estimate_rotation(y, vn).x_cn, enc);
    EXPECT_LT((a.vec - b.vec).cwiseAbs().maxCoeff(), 1e-4);
  }
}

TEST(Encode, BlockGainStaysBounded) {
  std::mt19937_64 rng(12);
  const EncoderParams params = EncoderParams::init(EncoderConfig{}, 13);
  for (int trial = 0; trial < 5; ++trial) {
    EXPECT_LT(max_block_gain(random_cloud(rng, 64), params), 4.0);
  }
}

TEST(Enc1, RoundTripIsExact) {
  const EncoderParams params = EncoderParams::init(small_cfg(), 14);
  std::stringstream ss;
  write_enc1(ss, params);
  EXPECT_EQ(ss.str().substr(0, 4), "ENC1");
  const EncoderParams back = read_enc1(ss);
  EXPECT_EQ(back.cfg, params.cfg);
  EXPECT_EQ(back.weights, params.weights);
}

}  // namespace
}  // namespace cpol
