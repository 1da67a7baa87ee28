// Copyright 2026 The canonpolicy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "canonpolicy/error.hpp"

namespace cpol {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Proper rotation matrix. Construction through `from_matrix` checks
/// orthonormality and det = +1 to `kRotationTol`.
class Rotation {
 public:
  static constexpr double kRotationTol = 1e-9;

  Rotation() : m_(Mat3::Identity()) {}

  static Rotation identity() { return Rotation(); }
  /// Validating constructor; throws kInvalidRotation on failure.
  static Rotation from_matrix(const Mat3& m);
  /// Trusted constructor for matrices produced by exact constructions.
  static Rotation unchecked(const Mat3& m) {
    Rotation r;
    r.m_ = m;
    return r;
  }
  static Rotation about_z(double theta);
  static bool is_valid(const Mat3& m, double tol = kRotationTol);

  const Mat3& matrix() const { return m_; }
  Vec3 operator*(const Vec3& v) const { return m_ * v; }
  Rotation operator*(const Rotation& o) const { return unchecked(m_ * o.m_); }
  Rotation transpose() const { return unchecked(m_.transpose()); }
  Vec3 col(int i) const { return m_.col(i); }

  /// Geodesic angle of this rotation in [0, pi].
  double angle() const;

 private:
  Mat3 m_;
};

/// Angle of r_a^T r_b, the geodesic distance on SO(3).
double rotation_distance(const Rotation& a, const Rotation& b);

struct RigidTransform {
  Rotation rot;
  Vec3 trans = Vec3::Zero();

  static RigidTransform identity() { return {}; }
  static RigidTransform from_homogeneous(const Mat4& h);
  Mat4 homogeneous() const;

  Vec3 apply(const Vec3& p) const { return rot * p + trans; }
};

RigidTransform compose(const RigidTransform& a, const RigidTransform& b);
RigidTransform inverse(const RigidTransform& t);

inline RigidTransform operator*(const RigidTransform& a, const RigidTransform& b) {
  return compose(a, b);
}

struct Quaternion {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  double norm() const;
};

/// First two columns of a rotation, before orthonormalization.
struct SixDRotation {
  Vec3 a1 = Vec3::UnitX();
  Vec3 a2 = Vec3::UnitY();
};

/// Rotation vector: direction is the axis, norm is the angle in radians.
struct AxisAngle {
  Vec3 v = Vec3::Zero();

  double angle() const { return v.norm(); }
};

/// Normalizes inputs within 1e-6 of unit norm, throws kNonUnitQuaternion otherwise.
Rotation quat_to_rotation(const Quaternion& q);
/// Returns the quaternion with w >= 0.
Quaternion rotation_to_quat(const Rotation& r);

/// Gram-Schmidt on (a1, a2) with the cross product as third column.
Rotation sixd_to_rotation(const SixDRotation& s);
SixDRotation rotation_to_sixd(const Rotation& r);

Rotation axisangle_to_rotation(const AxisAngle& a);
/// Angle in [0, pi]; at exactly pi the first nonzero axis component is positive.
AxisAngle rotation_to_axisangle(const Rotation& r);

Mat3 skew(const Vec3& v);

}  // namespace cpol
