// Copyright 2026 The canonpolicy Authors
// SPDX-License-Identifier: Apache-2.0

#include "canonpolicy/canon.hpp"

namespace cpol {

RobotState canon_state(const RobotState& s, const CanonicalFrame& f) {
  return RobotState::from_pose(inverse(f.effective()) * s.pose(), s.grip);
}

RobotState decanon_state(const RobotState& s, const CanonicalFrame& f) {
  return RobotState::from_pose(f.effective() * s.pose(), s.grip);
}

AbsoluteAction canon_action_abs(const AbsoluteAction& a, const CanonicalFrame& f) {
  return AbsoluteAction::from_pose(inverse(f.effective()) * a.pose(), a.grip);
}

AbsoluteAction decanon_action_abs(const AbsoluteAction& a, const CanonicalFrame& f) {
  return AbsoluteAction::from_pose(f.effective() * a.pose(), a.grip);
}

RelativeAction canon_action_rel(const RelativeAction& d, const CanonicalFrame& f) {
  const RigidTransform t = f.effective();
  return RelativeAction::from_displacement(inverse(t) * d.displacement() * t, d.grip);
}

RelativeAction decanon_action_rel(const RelativeAction& d, const CanonicalFrame& f) {
  const RigidTransform t = f.effective();
  return RelativeAction::from_displacement(t * d.displacement() * inverse(t), d.grip);
}

FrameDrift frame_drift(const CanonicalFrame& prev, const CanonicalFrame& cur) {
  const RigidTransform a = prev.effective(), b = cur.effective();
  return {rotation_distance(a.rot, b.rot), (b.trans - a.trans).norm()};
}

std::vector<RigidTransform> chain_relatives(const RigidTransform& start, std::span<const RelativeAction> rel) {
  std::vector<RigidTransform> out;
  out.reserve(rel.size());
  RigidTransform cur = start;
  for (const auto& d : rel) {
    cur = d.displacement() * cur;
    out.push_back(cur);
  }
  return out;
}

std::vector<RelativeAction> relatives_from_poses(const RigidTransform& start,
                                                 std::span<const RigidTransform> poses,
                                                 std::span<const double> grips) {
  std::vector<RelativeAction> out;
  out.reserve(poses.size());
  RigidTransform prev = start;
  for (std::size_t i = 0; i < poses.size(); ++i) {
    out.push_back(RelativeAction::from_displacement(poses[i] * inverse(prev), grips[i]));
    prev = poses[i];
  }
  return out;
}

}  // namespace cpol
