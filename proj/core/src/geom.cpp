// Copyright 2026 The canonpolicy Authors
// SPDX-License-Identifier: Apache-2.0

#include "canonpolicy/geom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace cpol {

namespace {

constexpr double kQuatUnitTol = 1e-6;
constexpr double kSixDEps = 1e-8;
constexpr double kSmallAngle = 1e-7;

Vec3 vee_antisym(const Mat3& m) {
  // (m - m^T)/2 as a vector.
  return 0.5 * Vec3(m(2, 1) - m(1, 2), m(0, 2) - m(2, 0), m(1, 0) - m(0, 1));
}

}  // namespace

Rotation Rotation::from_matrix(const Mat3& m) {
  if (!is_valid(m)) {
    throw Error(ErrorCode::kInvalidRotation, "matrix is not in SO(3)");
  }
  return unchecked(m);
}

Rotation Rotation::about_z(double theta) {
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  Mat3 m;
  m << c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0;
  return unchecked(m);
}

bool Rotation::is_valid(const Mat3& m, double tol) {
  if (!m.allFinite()) return false;
  const double ortho = (m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff();
  return ortho <= tol && std::abs(m.determinant() - 1.0) <= tol;
}

double Rotation::angle() const {
  const double s = vee_antisym(m_).norm();
  const double c = 0.5 * (m_.trace() - 1.0);
  return std::atan2(s, c);
}

double rotation_distance(const Rotation& a, const Rotation& b) {
  return (a.transpose() * b).angle();
}

RigidTransform RigidTransform::from_homogeneous(const Mat4& h) {
  RigidTransform t;
  t.rot = Rotation::from_matrix(h.topLeftCorner<3, 3>());
  t.trans = h.topRightCorner<3, 1>();
  return t;
}

Mat4 RigidTransform::homogeneous() const {
  Mat4 h = Mat4::Identity();
  h.topLeftCorner<3, 3>() = rot.matrix();
  h.topRightCorner<3, 1>() = trans;
  return h;
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  return {a.rot * b.rot, a.rot * b.trans + a.trans};
}

RigidTransform inverse(const RigidTransform& t) {
  const Rotation rt = t.rot.transpose();
  return {rt, -(rt * t.trans)};
}

double Quaternion::norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

Rotation quat_to_rotation(const Quaternion& q_in) {
  const double n = q_in.norm();
  if (!std::isfinite(n) || std::abs(n - 1.0) > kQuatUnitTol) {
    throw Error(ErrorCode::kNonUnitQuaternion, "quaternion norm " + std::to_string(n));
  }
  const double w = q_in.w / n, x = q_in.x / n, y = q_in.y / n, z = q_in.z / n;
  Mat3 m;
  m << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return Rotation::unchecked(m);
}

Quaternion rotation_to_quat(const Rotation& r) {
  // Shepperd: branch on the largest of (trace, diagonal entries).
  const Mat3& m = r.matrix();
  const double tr = m.trace();
  Quaternion q;
  if (tr >= m(0, 0) && tr >= m(1, 1) && tr >= m(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + tr);
    q.w = 0.25 * s;
    q.x = (m(2, 1) - m(1, 2)) / s;
    q.y = (m(0, 2) - m(2, 0)) / s;
    q.z = (m(1, 0) - m(0, 1)) / s;
  } else if (m(0, 0) >= m(1, 1) && m(0, 0) >= m(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + m(0, 0) - m(1, 1) - m(2, 2));
    q.w = (m(2, 1) - m(1, 2)) / s;
    q.x = 0.25 * s;
    q.y = (m(0, 1) + m(1, 0)) / s;
    q.z = (m(0, 2) + m(2, 0)) / s;
  } else if (m(1, 1) >= m(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + m(1, 1) - m(0, 0) - m(2, 2));
    q.w = (m(0, 2) - m(2, 0)) / s;
    q.x = (m(0, 1) + m(1, 0)) / s;
    q.y = 0.25 * s;
    q.z = (m(1, 2) + m(2, 1)) / s;
  } else {
    const double s = 2.0 * std::sqrt(1.0 + m(2, 2) - m(0, 0) - m(1, 1));
    q.w = (m(1, 0) - m(0, 1)) / s;
    q.x = (m(0, 2) + m(2, 0)) / s;
    q.y = (m(1, 2) + m(2, 1)) / s;
    q.z = 0.25 * s;
  }
  const double n = q.norm();
  const double sign = q.w < 0.0 ? -1.0 : 1.0;
  q.w *= sign / n;
  q.x *= sign / n;
  q.y *= sign / n;
  q.z *= sign / n;
  return q;
}

Rotation sixd_to_rotation(const SixDRotation& s) {
  const double n1 = s.a1.norm();
  if (!(n1 > kSixDEps)) {
    throw Error(ErrorCode::kDegenerateSixD, "first column is near zero");
  }
  const Vec3 u1 = s.a1 / n1;
  const Vec3 w = s.a2 - u1.dot(s.a2) * u1;
  const double n2 = w.norm();
  if (!(n2 > kSixDEps)) {
    throw Error(ErrorCode::kDegenerateSixD, "columns are near collinear");
  }
  const Vec3 u2 = w / n2;
  Mat3 m;
  m.col(0) = u1;
  m.col(1) = u2;
  m.col(2) = u1.cross(u2);
  return Rotation::unchecked(m);
}

SixDRotation rotation_to_sixd(const Rotation& r) { return {r.col(0), r.col(1)}; }

Mat3 skew(const Vec3& v) {
  Mat3 k;
  k << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return k;
}

Rotation axisangle_to_rotation(const AxisAngle& a) {
  const double theta = a.v.norm();
  const Mat3 k = skew(a.v);
  if (theta < kSmallAngle) {
    return Rotation::unchecked(Mat3::Identity() + k + 0.5 * k * k);
  }
  const double s = std::sin(theta) / theta;
  const double c = (1.0 - std::cos(theta)) / (theta * theta);
  return Rotation::unchecked(Mat3::Identity() + s * k + c * k * k);
}

AxisAngle rotation_to_axisangle(const Rotation& r) {
  const Mat3& m = r.matrix();
  const Vec3 sin_axis = vee_antisym(m);
  const double s = sin_axis.norm();
  const double c = 0.5 * (m.trace() - 1.0);
  const double theta = std::atan2(s, c);

  if (theta < std::numbers::pi / 2) {
    // theta / sin(theta), with its series near zero.
    const double scale = theta < kSmallAngle ? 1.0 + theta * theta / 6.0 : theta / s;
    return {scale * sin_axis};
  }

  // Near pi the antisymmetric part vanishes; read the axis from the
  // symmetric part (1 - cos) a a^T = S - cos I, largest diagonal first.
  const Mat3 sym = 0.5 * (m + m.transpose()) - c * Mat3::Identity();
  int k = 0;
  sym.diagonal().maxCoeff(&k);
  Vec3 axis = sym.col(k);
  axis.normalize();
  if (s > 1e-12) {
    if (axis.dot(sin_axis) < 0.0) axis = -axis;
  } else {
    for (int i = 0; i < 3; ++i) {
      if (std::abs(axis[i]) > 1e-12) {
        if (axis[i] < 0.0) axis = -axis;
        break;
      }
    }
  }
  return {theta * axis};
}

}  // namespace cpol
