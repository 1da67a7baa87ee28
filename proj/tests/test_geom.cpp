// Copyright 2026 The canonpolicy Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "canonpolicy/geom.hpp"
#include "canonpolicy/pointcloud.hpp"
#include "test_util.hpp"

namespace cpol {
namespace {

using testing::homogeneous;
using testing::random_vec;

constexpr double kPi = std::numbers::pi;

RigidTransform random_transform(std::mt19937_64& rng) {
  return {random_rotation(rng), random_vec(rng, 2.0)};
}

double transform_error(const RigidTransform& a, const RigidTransform& b) {
  return (a.homogeneous() - b.homogeneous()).cwiseAbs().maxCoeff();
}

TEST(Compose, IdentityIsNeutral) {
  std::mt19937_64 rng(1);
  const RigidTransform t = random_transform(rng);
  EXPECT_LT(transform_error(compose(RigidTransform::identity(), t), t), 1e-15);
  EXPECT_LT(transform_error(compose(t, RigidTransform::identity()), t), 1e-15);
}

TEST(Compose, WithInverseIsIdentity) {
  std::mt19937_64 rng(2);
  const RigidTransform t = random_transform(rng);
  EXPECT_LT(transform_error(compose(t, inverse(t)), RigidTransform::identity()), 1e-12);
}

TEST(Compose, MatchesHomogeneousProduct) {
  const RigidTransform a{Rotation::about_z(kPi / 2), Vec3(1, 0, 0)};
  const RigidTransform b{Rotation(), Vec3(0, 1, 0)};
  const Mat4 oracle = homogeneous(a.rot.matrix(), a.trans) * homogeneous(b.rot.matrix(), b.trans);
  const RigidTransform c = compose(a, b);
  EXPECT_LT((c.homogeneous() - oracle).cwiseAbs().maxCoeff(), 1e-15);
  // Rz(90) maps (0,1,0) to (-1,0,0); plus (1,0,0) gives the origin.
  EXPECT_LT(c.trans.norm(), 1e-15);

  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    const RigidTransform x = random_transform(rng), y = random_transform(rng);
    const Mat4 h = homogeneous(x.rot.matrix(), x.trans) * homogeneous(y.rot.matrix(), y.trans);
    EXPECT_LT((compose(x, y).homogeneous() - h).cwiseAbs().maxCoeff(), 1e-13);
  }
}

TEST(Inverse, Examples) {
  EXPECT_LT(transform_error(inverse(RigidTransform::identity()), RigidTransform::identity()), 0.0 + 1e-300);
  const RigidTransform t{Rotation(), Vec3(1, 2, 3)};
  EXPECT_EQ(inverse(t).trans, Vec3(-1, -2, -3));
}

TEST(Inverse, LeftInverseProperty) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 1000; ++i) {
    const RigidTransform t = random_transform(rng);
    ASSERT_LT(transform_error(compose(inverse(t), t), RigidTransform::identity()), 1e-9);
  }
}

TEST(Group, ClosureAndAssociativity) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 1000; ++i) {
    const RigidTransform a = random_transform(rng), b = random_transform(rng), c = random_transform(rng);
    const RigidTransform ab_c = compose(compose(a, b), c);
    const RigidTransform a_bc = compose(a, compose(b, c));
    ASSERT_TRUE(Rotation::is_valid(ab_c.rot.matrix()));
    ASSERT_LT(transform_error(ab_c, a_bc), 1e-9);
  }
}

TEST(Rotation, FromMatrixRejectsNonRotations) {
  Mat3 reflect = Mat3::Identity();
  reflect(2, 2) = -1.0;
  EXPECT_THROW(Rotation::from_matrix(reflect), Error);
  EXPECT_THROW(Rotation::from_matrix(2.0 * Mat3::Identity()), Error);
  EXPECT_NO_THROW(Rotation::from_matrix(Rotation::about_z(0.3).matrix()));
}

TEST(Quaternion, IdentityAndQuarterTurn) {
  EXPECT_EQ(quat_to_rotation({1, 0, 0, 0}).matrix(), Mat3::Identity());
  const double h = kPi / 4;
  const Mat3 r = quat_to_rotation({std::cos(h), 0, 0, std::sin(h)}).matrix();
  // Hand evaluation of the quaternion formula at w = z = 1/sqrt(2).
  Mat3 expected;
  expected << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  EXPECT_LT((r - expected).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Quaternion, NormTolerance) {
  EXPECT_NO_THROW(quat_to_rotation({1.0 + 5e-7, 0, 0, 0}));
  EXPECT_THROW(quat_to_rotation({1.0 + 1e-5, 0, 0, 0}), Error);
  try {
    quat_to_rotation({2, 0, 0, 0});
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonUnitQuaternion);
  }
}

TEST(Quaternion, RoundTripProperty) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> g;
  for (int i = 0; i < 1000; ++i) {
    Eigen::Vector4d v(g(rng), g(rng), g(rng), g(rng));
    v.normalize();
    const Quaternion q{v[0], v[1], v[2], v[3]};
    const Rotation r = quat_to_rotation(q);
    ASSERT_TRUE(Rotation::is_valid(r.matrix()));
    const Quaternion back = rotation_to_quat(r);
    EXPECT_GE(back.w, 0.0);
    ASSERT_LT(rotation_distance(r, quat_to_rotation(back)), 1e-9);
    const double sign = q.w < 0 ? -1.0 : 1.0;
    ASSERT_LT(std::abs(back.x - sign * q.x) + std::abs(back.y - sign * q.y) + std::abs(back.z - sign * q.z), 1e-9);
  }
}

TEST(SixD, Examples) {
  EXPECT_EQ(sixd_to_rotation({Vec3(1, 0, 0), Vec3(0, 1, 0)}).matrix(), Mat3::Identity());
  // Gram-Schmidt by hand: u1 = (1,0,0); (1,1,0) - (1,0,0) = (0,1,0).
  EXPECT_LT((sixd_to_rotation({Vec3(2, 0, 0), Vec3(1, 1, 0)}).matrix() - Mat3::Identity()).norm(), 1e-15);
}

TEST(SixD, DegenerateInputs) {
  try {
    sixd_to_rotation({Vec3(1e-9, 0, 0), Vec3(0, 1, 0)});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDegenerateSixD);
  }
  EXPECT_THROW(sixd_to_rotation({Vec3(1, 0, 0), Vec3(3, 1e-10, 0)}), Error);
}

TEST(SixD, RoundTripIsExact) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 1000; ++i) {
    const Rotation r = random_rotation(rng);
    ASSERT_LT((sixd_to_rotation(rotation_to_sixd(r)).matrix() - r.matrix()).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(AxisAngle, Examples) {
  EXPECT_EQ(axisangle_to_rotation({Vec3::Zero()}).matrix(), Mat3::Identity());
  const Mat3 r = axisangle_to_rotation({Vec3(0, 0, kPi / 2)}).matrix();
  EXPECT_LT((r - Rotation::about_z(kPi / 2).matrix()).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT(rotation_to_axisangle(Rotation()).v.norm(), 1e-300 + 0.0);
}

TEST(AxisAngle, SmallAngleSeries) {
  const Vec3 v(3e-8, -2e-8, 1e-8);
  const Rotation r = axisangle_to_rotation({v});
  EXPECT_TRUE(Rotation::is_valid(r.matrix(), 1e-14));
  EXPECT_LT((rotation_to_axisangle(r).v - v).norm(), 1e-20);
}

TEST(AxisAngle, HalfTurnSignConvention) {
  for (const Vec3& axis : {Vec3(0, 0, 1), Vec3(0, 0, -1), Vec3(-1, 2, 0).normalized(), Vec3(0, -3, 4).normalized()}) {
    const AxisAngle a = rotation_to_axisangle(axisangle_to_rotation({kPi * axis}));
    EXPECT_NEAR(a.angle(), kPi, 1e-12);
    Vec3 expected = axis;
    for (int i = 0; i < 3; ++i) {
      if (std::abs(expected[i]) > 1e-12) {
        if (expected[i] < 0) expected = -expected;
        break;
      }
    }
    EXPECT_LT((a.v / a.angle() - expected).norm(), 1e-8);
  }
}

TEST(AxisAngle, RoundTripProperty) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> ang(1e-9, kPi - 1e-6);
  std::uniform_real_distribution<double> logang(std::log(1e-9), std::log(kPi - 1e-6));
  for (int i = 0; i < 1000; ++i) {
    const Vec3 axis = random_vec(rng).normalized();
    const double theta = i % 2 == 0 ? ang(rng) : std::exp(logang(rng));
    const Vec3 v = theta * axis;
    const AxisAngle back = rotation_to_axisangle(axisangle_to_rotation({v}));
    ASSERT_LE(back.angle(), kPi);
    ASSERT_LT((back.v - v).norm(), 1e-8) << "theta=" << theta;
  }
}

TEST(Conversions, MutuallyConsistent) {
  std::mt19937_64 rng(9);
  for (int i = 0; i < 1000; ++i) {
    const Rotation r = random_rotation(rng);
    const Rotation a = quat_to_rotation(rotation_to_quat(r));
    const Rotation b = sixd_to_rotation(rotation_to_sixd(a));
    const Rotation c = axisangle_to_rotation(rotation_to_axisangle(b));
    ASSERT_LT((c.matrix() - r.matrix()).cwiseAbs().maxCoeff(), 1e-8);
  }
}

}  // namespace
}  // namespace cpol
