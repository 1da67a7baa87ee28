// Copyright 2026 The canonpolicy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "canonpolicy/geom.hpp"

// Frame transport for robot states and actions. A canonical frame T maps
// canonical coordinates to observation coordinates; states and absolute
// actions are left-multiplied by T^-1, relative actions are conjugated.
namespace cpol {

struct RobotState {
  Vec3 pos = Vec3::Zero();
  Rotation ori;
  double grip = 0.0;  // normalized open width in [0, 1]

  RigidTransform pose() const { return {ori, pos}; }
  static RobotState from_pose(const RigidTransform& t, double grip) { return {t.trans, t.rot, grip}; }
};

struct AbsoluteAction {
  Vec3 pos = Vec3::Zero();
  SixDRotation ori_sixd;
  double grip = 0.0;

  /// Throws kDegenerateSixD for invalid orientation columns.
  RigidTransform pose() const { return {sixd_to_rotation(ori_sixd), pos}; }
  static AbsoluteAction from_pose(const RigidTransform& t, double grip) {
    return {t.trans, rotation_to_sixd(t.rot), grip};
  }
};

struct RelativeAction {
  Vec3 dpos = Vec3::Zero();
  AxisAngle dori;
  double grip = 0.0;

  RigidTransform displacement() const { return {axisangle_to_rotation(dori), dpos}; }
  static RelativeAction from_displacement(const RigidTransform& d, double grip) {
    return {d.trans, rotation_to_axisangle(d.rot), grip};
  }
};

struct CanonicalFrame {
  RigidTransform T;
  bool degenerate = false;

  /// The transform actually applied: translation only when degenerate.
  RigidTransform effective() const { return degenerate ? RigidTransform{Rotation(), T.trans} : T; }
};

RobotState canon_state(const RobotState& s, const CanonicalFrame& f);
RobotState decanon_state(const RobotState& s, const CanonicalFrame& f);

AbsoluteAction canon_action_abs(const AbsoluteAction& a, const CanonicalFrame& f);
AbsoluteAction decanon_action_abs(const AbsoluteAction& a, const CanonicalFrame& f);

/// T^-1 dA T.
RelativeAction canon_action_rel(const RelativeAction& d, const CanonicalFrame& f);
/// T dA T^-1.
RelativeAction decanon_action_rel(const RelativeAction& d, const CanonicalFrame& f);

struct FrameDrift {
  double angle = 0.0;        // rad
  double translation = 0.0;  // m
};

/// Rotation angle of R_prev^T R_cur and the distance between translations.
FrameDrift frame_drift(const CanonicalFrame& prev, const CanonicalFrame& cur);

/// A_t = dA_t * A_{t-1}, starting from `start` = A_{-1}.
std::vector<RigidTransform> chain_relatives(const RigidTransform& start, std::span<const RelativeAction> rel);
/// Inverse of `chain_relatives`: dA_t = A_t * A_{t-1}^-1.
std::vector<RelativeAction> relatives_from_poses(const RigidTransform& start,
                                                 std::span<const RigidTransform> poses,
                                                 std::span<const double> grips);

}  // namespace cpol
