// Copyright 2026 The canonpolicy Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <filesystem>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "canonpolicy/error.hpp"
#include "canonpolicy/harness.hpp"
#include "canonpolicy/pointcloud_io.hpp"

namespace cpol {
namespace {

double pose_gap(const RigidTransform& a, const RigidTransform& b) {
  return std::max((a.trans - b.trans).cwiseAbs().maxCoeff(), (a.rot.matrix() - b.rot.matrix()).cwiseAbs().maxCoeff());
}

const SceneTemplate& tmpl(const char* name) {
  return builtin_templates()[static_cast<std::size_t>(template_index(name))];
}

TEST(Templates, ShapesAndCentering) {
  EXPECT_EQ(tmpl("push_t").points.size(), 9);
  EXPECT_EQ(tmpl("box_stack").points.size(), 64);
  EXPECT_EQ(tmpl("mug").points.size(), 128);
  for (const auto& t : builtin_templates()) {
    EXPECT_LT(mean_point(t.points).norm(), 1e-6) << t.name;
    EXPECT_EQ(io::quantize_f32(t.points).points(), t.points.points()) << t.name;
  }
  EXPECT_THROW(template_index("teapot"), Error);
}

TEST(ReachPose, Endpoints) {
  std::mt19937_64 rng(1);
  const RigidTransform a = random_se3(rng, RotMode::kSO3, 1.0), b = random_se3(rng, RotMode::kSO3, 1.0);
  EXPECT_EQ(pose_gap(reach_pose(a, b, 1.0), b), 0.0);
  EXPECT_LT(pose_gap(reach_pose(a, b, 0.0), a), 1e-12);
  const RigidTransform mid = reach_pose(a, b, 0.5);
  EXPECT_NEAR(rotation_distance(a.rot, mid.rot), rotation_distance(mid.rot, b.rot), 1e-9);
}

TEST(Episodes, CleanIdentityPoseReproducesTemplate) {
  DataConfig dc;
  dc.max_angle = 0.0;
  dc.trans_range = 0.0;
  const EpisodeRecord ep = generate_episode(tmpl("mug"), 2, dc, 2, 8, RotMode::kSO3, 3);
  EXPECT_EQ(pose_gap(ep.scene_pose, RigidTransform{}), 0.0);
  for (const auto& o : ep.demo.obs) EXPECT_EQ(o.cloud.points(), tmpl("mug").points.points());
}

TEST(Episodes, FinalTargetIsTheGraspAndGripsClose) {
  const DataConfig dc;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const EpisodeRecord ep = generate_episode(tmpl("box_stack"), 1, dc, 2, 8, RotMode::kSO3, seed);
    ASSERT_EQ(ep.demo.obs.size(), 2u);
    ASSERT_EQ(ep.demo.poses.size(), 8u);
    EXPECT_LT(pose_gap(ep.demo.poses.back(), compose(ep.scene_pose, tmpl("box_stack").grasp_offset)), 1e-15);
    for (std::size_t k = 0; k + 1 < 8; ++k) EXPECT_EQ(ep.demo.grips[k], 1.0);
    EXPECT_EQ(ep.demo.grips.back(), 0.0);
    EXPECT_LE(rotation_distance(ep.scene_pose.rot, Rotation()), dc.max_angle + 1e-12);
    EXPECT_LE(ep.scene_pose.trans.cwiseAbs().maxCoeff(), dc.trans_range);
  }
}

TEST(Episodes, So2PosesStayPlanar) {
  const DataConfig dc;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const EpisodeRecord ep = generate_episode(tmpl("push_t"), 0, dc, 2, 4, RotMode::kSO2, seed);
    EXPECT_LT((ep.scene_pose.rot.matrix().col(2) - Vec3::UnitZ()).norm(), 1e-12);
    EXPECT_EQ(ep.scene_pose.trans.z(), 0.0);
  }
}

TEST(Episodes, GenerationIsDeterministic) {
  DataConfig dc;
  dc.noise_level = 2;
  dc.num_points = 40;
  const auto a = generate_dataset(tmpl("mug"), 2, dc, 4, 2, 8, RotMode::kSO3, 9);
  const auto b = generate_dataset(tmpl("mug"), 2, dc, 4, 2, 8, RotMode::kSO3, 9);
  for (std::size_t i = 0; i < a.size(); ++i) {
    std::ostringstream sa, sb;
    write_epr1(sa, a[i]);
    write_epr1(sb, b[i]);
    EXPECT_EQ(sa.str(), sb.str());
    EXPECT_EQ(a[i].demo.obs[0].cloud.size(), 40);
  }
  EXPECT_NE(a[0].seed, a[1].seed);
}

TEST(Epr1, RoundTripAndRejectsGarbage) {
  DataConfig dc;
  dc.noise_level = 3;
  const EpisodeRecord ep = generate_episode(tmpl("box_stack"), 1, dc, 3, 5, RotMode::kSO3, 11);
  std::stringstream ss;
  write_epr1(ss, ep);
  const EpisodeRecord back = read_epr1(ss);
  EXPECT_EQ(back.seed, ep.seed);
  EXPECT_EQ(back.template_id, 1);
  ASSERT_EQ(back.demo.obs.size(), 3u);
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_EQ(back.demo.obs[j].cloud.points(), ep.demo.obs[j].cloud.points());
    EXPECT_EQ(pose_gap(back.demo.obs[j].state.pose(), ep.demo.obs[j].state.pose()), 0.0);
  }
  for (std::size_t k = 0; k < 5; ++k) EXPECT_EQ(pose_gap(back.demo.poses[k], ep.demo.poses[k]), 0.0);
  EXPECT_EQ(back.demo.grips, ep.demo.grips);
  EXPECT_EQ(pose_gap(back.scene_pose, ep.scene_pose), 0.0);

  std::istringstream bad("EPRX0000");
  EXPECT_THROW(read_epr1(bad), Error);
  const std::string bytes = ss.str();
  std::istringstream cut(bytes.substr(0, bytes.size() - 10));
  EXPECT_THROW(read_epr1(cut), Error);
}

TEST(Epr1, DirectoryRoundTripKeepsOrder) {
  const auto dir = std::filesystem::temp_directory_path() / "cpol_test_episodes";
  std::filesystem::remove_all(dir);
  const auto eps = generate_dataset(tmpl("push_t"), 0, DataConfig{}, 12, 2, 3, RotMode::kSO2, 4);
  save_episodes(dir, eps);
  const auto back = load_episodes(dir);
  ASSERT_EQ(back.size(), eps.size());
  for (std::size_t i = 0; i < eps.size(); ++i) EXPECT_EQ(back[i].seed, eps[i].seed);
  std::filesystem::remove_all(dir);
  EXPECT_THROW(load_episodes(dir), Error);
}

TEST(TransformEpisode, MovesEverything) {
  std::mt19937_64 rng(5);
  const EpisodeRecord ep = generate_episode(tmpl("box_stack"), 1, DataConfig{}, 2, 4, RotMode::kSO3, 1);
  const RigidTransform h = random_se3(rng, RotMode::kSO3, 1.0);
  const EpisodeRecord moved = transform_episode(ep, h);
  EXPECT_LT(max_point_distance(moved.demo.obs[1].cloud, transform(ep.demo.obs[1].cloud, h)), 1e-15);
  EXPECT_LT(pose_gap(moved.demo.poses.back(), compose(h, ep.demo.poses.back())), 1e-15);
  const EpisodeRecord back = transform_episode(moved, inverse(h));
  EXPECT_LT(pose_gap(back.scene_pose, ep.scene_pose), 1e-12);
}

TEST(Evaluate, OracleSucceedsEverywhere) {
  const auto seen = generate_dataset(tmpl("box_stack"), 1, DataConfig{}, 6, 2, 4, RotMode::kSO3, 1);
  const auto novel = generate_dataset(tmpl("box_stack"), 1, DataConfig{}, 5, 2, 4, RotMode::kSO3, 2);
  const EvalReport r = evaluate(oracle_policy(), seen, novel, RotMode::kSO3, EvalConfig{});
  ASSERT_EQ(r.conditions.size(), 4u);
  for (const Condition c : {Condition::kSeen, Condition::kSeenRd, Condition::kNovel, Condition::kNovelRd}) {
    EXPECT_EQ(r.at(c).success_rate, 1.0) << to_string(c);
    EXPECT_LT(r.at(c).mean_trans_error, 1e-12);
  }
  EXPECT_EQ(r.at(Condition::kNovel).episodes, 5);
  EXPECT_LT(r.at(Condition::kSeenRd).equivariance_residual, 1e-9);
}

TEST(Evaluate, ConstantPolicyFailsUnderTransforms) {
  const auto seen = generate_dataset(tmpl("box_stack"), 1, DataConfig{}, 8, 2, 4, RotMode::kSO3, 1);
  const RigidTransform fixed = compose(RigidTransform{}, tmpl("box_stack").grasp_offset);
  const PolicyFn constant = [fixed](const EpisodeRecord&, std::uint64_t) { return fixed; };
  const EvalReport r = evaluate(constant, seen, seen, RotMode::kSO3, EvalConfig{});
  EXPECT_EQ(r.at(Condition::kSeenRd).success_rate, 0.0);
  EXPECT_GT(r.at(Condition::kSeenRd).equivariance_residual, 0.1);
}

TEST(Evaluate, ReportFormat) {
  const auto seen = generate_dataset(tmpl("mug"), 2, DataConfig{}, 2, 2, 2, RotMode::kSO3, 1);
  std::ostringstream out;
  write_report(out, evaluate(oracle_policy(), seen, seen, RotMode::kSO3, EvalConfig{}));
  EXPECT_NE(out.str().find("seen.success_rate = 1\n"), std::string::npos);
  EXPECT_NE(out.str().find("novel+rd.equivariance_residual = "), std::string::npos);
}

TEST(Dispersion, CleanLevelIsInvariantAndNoiseGrows) {
  VNConfig vc;
  vc.q = 8;
  vc.repeat_layers = 2;
  vc.feat_dim = 12;
  const VNParams params = VNParams::init(vc, 3);
  const std::vector<int> levels{0, 1, 2, 3};
  const auto rows = feature_dispersion_study(params, template_index("mug"), levels, DispersionConfig{});
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_LT(rows[0].dispersion, 1e-5);
  EXPECT_GT(rows[3].dispersion, rows[0].dispersion);
  for (const auto& r : rows) EXPECT_TRUE(std::isfinite(r.dispersion));
}

TEST(Dispersion, InvariantFeatureIgnoresRigidMotion) {
  const VNParams params = VNParams::init(VNConfig{}, 4);
  std::mt19937_64 rng(2);
  const Eigen::VectorXd a = invariant_feature(tmpl("box_stack").points, params);
  const Eigen::VectorXd b = invariant_feature(transform(tmpl("box_stack").points, random_se3(rng, RotMode::kSO3, 2.0)), params);
  EXPECT_LT((a - b).norm() / a.norm(), 1e-6);
}

TEST(FrameDrift, SmallOnCleanEpisodes) {
  // Consecutive observations share the scene, so their frames agree up to
  // sampling noise in the clouds.
  const VNParams params = VNParams::init(VNConfig{}, 5);
  DataConfig dc;
  dc.noise_level = 0;
  std::vector<double> drift;
  for (const auto& ep : generate_dataset(tmpl("mug"), 2, dc, 10, 2, 4, RotMode::kSO3, 3)) {
    const Canonicalization a = estimate_rotation(ep.demo.obs[0].cloud, params);
    const Canonicalization b = estimate_rotation(ep.demo.obs[1].cloud, params);
    drift.push_back(frame_drift({a.frame, a.degenerate}, {b.frame, b.degenerate}).angle);
  }
  std::nth_element(drift.begin(), drift.begin() + 5, drift.end());
  EXPECT_LT(drift[5], 0.05);
}

TEST(Suites, EquivarianceSuitePassesForBothModes) {
  PolicyConfig c;
  c.horizon = 3;
  c.vn.repeat_layers = 2;
  c.vn.feat_dim = 8;
  c.vn.q = 8;
  c.enc.widths = {8};
  c.enc.out_dim = 8;
  c.head.hidden = 16;
  c.head.blocks = 1;
  c.sample_steps = 5;
  for (const RotMode m : {RotMode::kSO3, RotMode::kSO2}) {
    c.vn.mode = m;
    for (const auto& r : equivariance_suite(c, 2)) EXPECT_TRUE(r.pass) << r.name << " " << r.value;
  }
}

}  // namespace
}  // namespace cpol
