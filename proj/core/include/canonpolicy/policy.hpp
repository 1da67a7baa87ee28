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

#include "canonpolicy/autodiff.hpp"
#include "canonpolicy/canon.hpp"
#include "canonpolicy/encoder.hpp"
#include "canonpolicy/vn.hpp"

// Canonical policy: frame estimation, frame transport of states and actions,
// scene encoding and a conditional generative action head (diffusion with
// DDIM sampling, or flow matching with Euler sampling).
namespace cpol {

enum class ActionMode { kAbsolute, kRelative };
enum class HeadKind { kDiffusion, kFlow };

const char* to_string(ActionMode mode);
const char* to_string(HeadKind kind);
ActionMode action_mode_from_string(const std::string& s);
HeadKind head_kind_from_string(const std::string& s);

struct HeadConfig {
  int hidden = 128;
  int blocks = 2;
  int time_dim = 32;

  bool operator==(const HeadConfig&) const = default;
};

struct PolicyConfig {
  int obs_window = 2;  // m
  int horizon = 8;     // n
  ActionMode action_mode = ActionMode::kAbsolute;
  HeadKind head_kind = HeadKind::kDiffusion;
  int diffusion_steps = 100;  // K
  int sample_steps = 20;
  bool canonicalize = true;
  /// Lower bound on the per-dimension half range used by the normalizer.
  double min_half_range = 0.05;
  VNConfig vn;
  EncoderConfig enc;
  HeadConfig head;

  void validate() const;
  /// 10 (pos, sixd, grip) for absolute, 7 (dpos, axis-angle, grip) for relative.
  int step_dim() const { return action_mode == ActionMode::kAbsolute ? 10 : 7; }
  int action_dim() const { return horizon * step_dim(); }
  static constexpr int kStateDim = 10;
  /// Scene and state features of the window, without the time embedding.
  int cond_dim() const { return obs_window * (enc.out_dim + kStateDim); }
  bool operator==(const PolicyConfig&) const = default;
};

struct Observation {
  PointCloud cloud;
  RobotState state;
};

/// One training window: m observations, oldest first, and the n expert
/// target poses that follow the latest one, in the world frame.
struct Demo {
  std::vector<Observation> obs;
  std::vector<RigidTransform> poses;
  std::vector<double> grips;
};

/// Per-dimension affine map to roughly [-1, 1].
struct Normalizer {
  Eigen::RowVectorXd center;
  Eigen::RowVectorXd half;

  static Normalizer identity(int dim);
  /// Min/max over rows; the half range is clamped below by `min_half`.
  static Normalizer fit(const Eigen::MatrixXd& rows, double min_half);

  Eigen::MatrixXd normalize(const Eigen::MatrixXd& rows) const;
  Eigen::MatrixXd denormalize(const Eigen::MatrixXd& rows) const;
  bool operator==(const Normalizer& o) const { return center == o.center && half == o.half; }
};

struct DiffusionSchedule {
  Eigen::VectorXd betas;
  Eigen::VectorXd alpha_bars;

  /// Squared-cosine schedule with offset 0.008, betas clipped at 0.999.
  static DiffusionSchedule cosine(int k);
  int steps() const { return static_cast<int>(betas.size()); }
};

/// Sinusoidal embedding of a (possibly fractional) timestep, 1 x dim.
Eigen::RowVectorXd time_embedding(double tau, int dim);

/// Residual MLP head with feature-wise (scale, shift) conditioning. The
/// output layer starts at zero.
struct HeadParams {
  static ad::ParamSet init(const PolicyConfig& cfg, std::uint64_t seed, bool zero_output = true);
  static std::size_t param_count(const PolicyConfig& cfg);
};

/// Predicts noise (diffusion) or velocity (flow) for a batch: `a` is B x D,
/// `cond` B x cond_dim, one timestep per row.
ad::Var denoiser_forward(ad::Tape& t, ad::Var a, ad::Var cond, std::span<const double> tau,
                         const PolicyConfig& cfg, const ad::ParamSet& head, ad::ParamSet* grads);

/// Eager denoiser prediction.
Eigen::MatrixXd denoise(const Eigen::MatrixXd& a, const Eigen::MatrixXd& cond, std::span<const double> tau,
                        const PolicyConfig& cfg, const ad::ParamSet& head);

/// Model callback for samplers: (x, per-row timestep) to prediction.
using Predictor = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&, std::span<const double>)>;

/// Deterministic DDIM (eta = 0) over `steps` evenly strided timesteps from x_init.
Eigen::MatrixXd ddim_sample(const DiffusionSchedule& sched, int steps, const Predictor& eps,
                            Eigen::MatrixXd x_init);
/// Euler integration of the velocity field from t = 0 (noise) to t = 1.
/// The predictor receives tau = t * k_scale.
Eigen::MatrixXd flow_sample(int steps, double k_scale, const Predictor& vel, Eigen::MatrixXd x_init);

struct Policy {
  PolicyConfig cfg;
  VNParams vn;
  EncoderParams enc;
  ad::ParamSet head;
  Normalizer norm;

  static Policy init(const PolicyConfig& cfg, std::uint64_t seed);
  std::size_t num_params() const;
  /// Share of the rotation-estimator branch in the total parameter count.
  double phi_share() const;
};

/// Gradients for every parameter group of a policy.
struct PolicyGrads {
  ad::ParamSet vn;
  ad::ParamSet enc;
  ad::ParamSet head;

  static PolicyGrads zeros_like(const Policy& p);
  bool all_finite() const;
};

/// Differentiable per-window quantities. `target` is the normalized canonical
/// action row when the demo carries actions.
struct WindowGraph {
  ad::Var cond;
  ad::Var target;
  CanonicalFrame frame;
  ad::Var rotation;
};

/// Builds the canonical conditioning (and target, when present) for one
/// window. Null grads leave that group frozen.
WindowGraph build_window(ad::Tape& t, const Policy& p, const Demo& demo, ad::ParamSet* vn_grads,
                         ad::ParamSet* enc_grads, bool normalize_target = true);

/// Raw canonical action rows (one per demo), for fitting the normalizer.
Eigen::MatrixXd canonical_targets(const Policy& p, std::span<const Demo> demos);

struct LossNoise {
  Eigen::MatrixXd noise;      // B x D standard normal
  std::vector<double> level;  // diffusion step index, or flow time in [0, 1]
};

/// Draws the per-row noise and timestep for one training batch.
LossNoise draw_loss_noise(const PolicyConfig& cfg, int batch, std::uint64_t seed);

/// Generative training loss of one batch on the tape.
ad::Var batch_loss(ad::Tape& t, const Policy& p, std::span<const Demo* const> batch, const LossNoise& noise,
                   PolicyGrads* grads, bool freeze_phi);

/// Loss and gradients of one batch; gradients are added into `grads`.
double loss_and_grad(const Policy& p, std::span<const Demo* const> batch, const LossNoise& noise,
                     PolicyGrads& grads, bool freeze_phi);

struct Rollout {
  CanonicalFrame frame;
  Eigen::RowVectorXd canonical;  // sampled normalized canonical action row
  std::vector<AbsoluteAction> absolute;  // world frame, absolute mode
  std::vector<RelativeAction> relative;  // world frame, relative mode
  /// Predicted end-effector pose after the last step.
  RigidTransform final_pose;
};

/// Canonicalize, encode, sample and de-canonicalize one observation window.
Rollout policy_rollout(const Policy& p, std::span<const Observation> window, std::uint64_t seed);

/// Adam with bias correction over one parameter group.
class Adam {
 public:
  Adam() = default;
  Adam(const ad::ParamSet& like, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(ad::ParamSet& params, const ad::ParamSet& grads);

 private:
  double lr_ = 0.0, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
  ad::ParamSet m_, v_;
};

struct TrainConfig {
  int epochs = 100;
  int batch_size = 16;
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  bool freeze_phi = false;
  int log_every = 10;
  /// 0 disables periodic checkpoints.
  int checkpoint_every = 0;
  std::uint64_t seed = 0;
};

struct TrainResult {
  std::vector<double> losses;  // one per optimizer step
  int steps = 0;
};

/// Fits the normalizer while it is still the identity, then runs the epoch
/// loop. Metrics go to `metrics` as
/// "step name value" lines; checkpoints call `on_checkpoint`.
TrainResult train(Policy& p, std::span<const Demo> data, const TrainConfig& tc, std::ostream* metrics,
                  const std::function<void(const Policy&, int step)>& on_checkpoint = {});

// Checkpoint container: the VNP1 and ENC1 blocks followed by a "HEAD" block
// holding the policy and head configuration, the normalizer and the head
// parameters, all little-endian.
void write_checkpoint(std::ostream& out, const Policy& p);
Policy read_checkpoint(std::istream& in);
void save_checkpoint(const std::filesystem::path& path, const Policy& p);
Policy load_checkpoint(const std::filesystem::path& path);

}  // namespace cpol
