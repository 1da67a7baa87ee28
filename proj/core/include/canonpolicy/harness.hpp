// Copyright 2026 The canonpolicy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "canonpolicy/policy.hpp"

// Synthetic reach-to-grasp tasks, the four-condition evaluation, the
// noise-dispersion study and the text configuration shared by the CLI.
namespace cpol {

struct SceneTemplate {
  std::string name;
  PointCloud points;            // decentered
  RigidTransform grasp_offset;  // grasp pose in the template frame
};

/// "push_t" (9 planar keypoints), "box_stack" (64 points), "mug" (128 points).
const std::vector<SceneTemplate>& builtin_templates();
int template_index(const std::string& name);

/// Scene pose distribution. Angles are drawn uniformly in [0, max_angle]
/// about a uniform axis (so3) or in [-max_angle, max_angle] about z (so2);
/// max_angle >= pi in so3 mode gives uniform rotations.
struct PoseSampler {
  RotMode mode = RotMode::kSO3;
  double max_angle = 0.3;
  double trans_range = 0.05;

  RigidTransform sample(std::mt19937_64& rng) const;
};

struct DataConfig {
  std::string template_name = "box_stack";
  int count = 200;
  int novel_count = 100;
  double max_angle = 0.3;
  double trans_range = 0.05;
  int noise_level = 0;
  double start_trans = 0.1;
  double start_angle = 0.3;
  /// Farthest-point downsampling target; 0 keeps every point.
  int num_points = 0;
  std::uint64_t seed = 1;
};

struct EpisodeRecord {
  Demo demo;
  RigidTransform scene_pose;
  int template_id = 0;
  std::uint64_t seed = 0;
};

/// Expert pose at phase s along the reach: s = 0 is the start, s = 1 the
/// grasp; positions interpolate linearly, orientations along the geodesic.
RigidTransform reach_pose(const RigidTransform& start, const RigidTransform& goal, double s);

/// One episode: the template at a sampled pose, m observations ending at the
/// reach start and n expert targets ending at scene_pose * grasp_offset.
EpisodeRecord generate_episode(const SceneTemplate& tmpl, int template_id, const DataConfig& cfg, int obs_window,
                               int horizon, RotMode mode, std::uint64_t seed);
/// Episodes with seeds derived from (seed, index).
std::vector<EpisodeRecord> generate_dataset(const SceneTemplate& tmpl, int template_id, const DataConfig& cfg,
                                            int count, int obs_window, int horizon, RotMode mode,
                                            std::uint64_t seed);

/// Applies h to every cloud, state, target and the scene pose.
EpisodeRecord transform_episode(const EpisodeRecord& ep, const RigidTransform& h);

// "EPR1": magic, uint64 seed, uint32 template id, m, n; m times (PCF1 block,
// state pose, grip); n times (target pose, grip); scene pose. Poses are 9
// row-major rotation entries then 3 translation entries, all float64 LE.
void write_epr1(std::ostream& out, const EpisodeRecord& ep);
EpisodeRecord read_epr1(std::istream& in);
void save_episodes(const std::filesystem::path& dir, std::span<const EpisodeRecord> eps);
std::vector<EpisodeRecord> load_episodes(const std::filesystem::path& dir);

enum class Condition { kSeen, kSeenRd, kNovel, kNovelRd };
const char* to_string(Condition c);

struct EvalConfig {
  double success_trans = 0.02;  // m
  double success_angle = 0.1;   // rad
  /// Translation range of the random transforms of the "+rd" conditions.
  double rd_trans = 0.5;
  std::uint64_t seed = 7;
};

struct ConditionReport {
  Condition condition = Condition::kSeen;
  int episodes = 0;
  double success_rate = 0.0;
  double mean_trans_error = 0.0;
  double mean_angle_error = 0.0;
  /// Mean over episodes of max(translation, angle) between the prediction on
  /// the transformed episode and the transported original prediction.
  double equivariance_residual = 0.0;
};

struct EvalReport {
  std::vector<ConditionReport> conditions;
  std::uint64_t seed = 0;

  const ConditionReport& at(Condition c) const;
};

/// Predicted end-effector pose after the last action of an episode's window.
using PolicyFn = std::function<RigidTransform(const EpisodeRecord&, std::uint64_t seed)>;

PolicyFn policy_fn(const Policy& p);
/// Reads the ground-truth final target: the harness's upper bound.
PolicyFn oracle_policy();

/// All four conditions. "+rd" applies one random transform (in `mode`'s
/// class) per episode; episode i uses the same sampler seed in every
/// condition.
EvalReport evaluate(const PolicyFn& policy, std::span<const EpisodeRecord> seen, std::span<const EpisodeRecord> novel,
                    RotMode mode, const EvalConfig& cfg);

void write_report(std::ostream& out, const EvalReport& r);

struct DispersionConfig {
  /// Independent groups of augmentations; their pairwise distances are pooled.
  int samples = 8;
  int augmentations = 8;
  double trans_range = 0.5;
  std::uint64_t seed = 11;
};

struct DispersionRow {
  int level = 0;
  double intra = 0.0;       // mean pairwise rotation-removed feature distance
  double dispersion = 0.0;  // intra / mean inter-template distance
};

/// Rotation-removed pooled feature R^T G of a cloud, flattened.
Eigen::VectorXd invariant_feature(const PointCloud& x, const VNParams& params);

/// For each noise level: `samples` groups of `augmentations` random rigid
/// copies of the template, each corrupted at that level and compared within
/// its group after rotation removal, normalized by the distance from the
/// clean template to the nearest other template.
std::vector<DispersionRow> feature_dispersion_study(const VNParams& params, int template_id,
                                                    std::span<const int> levels, const DispersionConfig& cfg);

/// Optional estimator training on noisy copies of the built-in templates.
/// Each step draws one noise level per template in [1, max_level] and
/// minimizes, per template, the log ratio of the squared spread of its
/// rotation-removed features to the squared distance between its mean
/// feature and the nearest other template's.
struct ConsistencyConfig {
  int steps = 0;  // 0 disables
  int augmentations = 6;
  int max_level = 2;
  double lr = 3e-4;
  double trans_range = 0.5;
  int log_every = 100;
  std::uint64_t seed = 13;
};

/// Returns the loss of every step. Templates that would not keep more than
/// q points at the heaviest noise level enter clean, as anchors only.
std::vector<double> train_consistency(VNParams& params, const ConsistencyConfig& cfg, std::ostream* metrics);

struct HarnessConfig {
  PolicyConfig policy;
  ConsistencyConfig consistency;
  TrainConfig train;
  DataConfig data;
  EvalConfig eval;
  DispersionConfig dispersion;
};

/// Flat "key = value" text with '#' comments and [section] headers, applied
/// over `base`. Unknown keys and malformed values throw kConfig.
HarnessConfig parse_config(const std::string& text, HarnessConfig base = {});
HarnessConfig load_config(const std::filesystem::path& path, HarnessConfig base = {});
std::string dump_config(const HarnessConfig& cfg);

struct CheckResult {
  std::string name;
  double value = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

/// Equivariance and transport identities on fresh parameters.
std::vector<CheckResult> equivariance_suite(const PolicyConfig& cfg, std::uint64_t seed);
/// Reverse mode against central differences for the estimator, the encoder
/// and the training losses of both heads, on 16-point clouds.
std::vector<CheckResult> gradient_suite(const PolicyConfig& cfg, std::uint64_t seed);

}  // namespace cpol
