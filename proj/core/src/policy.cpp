// Copyright 2026 The canonpolicy Authors
// SPDX-License-Identifier: Apache-2.0

#include "canonpolicy/policy.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>
#include <string_view>

#include "canonpolicy/binary_io.hpp"

namespace cpol {

using ad::Matrix;
using ad::ParamSet;
using ad::Tape;
using ad::Var;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void require(bool ok, const char* what) {
  if (!ok) throw Error(ErrorCode::kConfig, what);
}

void fill_uniform(Matrix& m, std::mt19937_64& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(m.rows()));
  std::uniform_real_distribution<double> u(-s, s);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = u(rng);
  }
}

Matrix standard_normal(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = g(rng);
  }
  return m;
}

// Head tensor layout: input linear, then per block (film, l1, l2), then output.
constexpr std::size_t kIn = 0;
std::size_t block_base(int b) { return 2 + 6 * static_cast<std::size_t>(b); }
std::size_t out_base(const PolicyConfig& cfg) { return block_base(cfg.head.blocks); }

Var linear(Tape& t, Var x, const ParamSet& ps, std::size_t w, ParamSet* grads) {
  return ad::add_row(t, ad::matmul(t, x, t.param(ps, w, grads)), t.param(ps, w + 1, grads));
}

Matrix time_matrix(std::span<const double> tau, int dim) {
  Matrix m(static_cast<Eigen::Index>(tau.size()), dim);
  for (std::size_t i = 0; i < tau.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = time_embedding(tau[i], dim);
  return m;
}

Eigen::RowVector3d row_of(const Vec3& v) { return v.transpose(); }

}  // namespace

const char* to_string(ActionMode mode) { return mode == ActionMode::kAbsolute ? "absolute" : "relative"; }
const char* to_string(HeadKind kind) { return kind == HeadKind::kDiffusion ? "diffusion" : "flow"; }

ActionMode action_mode_from_string(const std::string& s) {
  if (s == "absolute") return ActionMode::kAbsolute;
  if (s == "relative") return ActionMode::kRelative;
  throw Error(ErrorCode::kConfig, "action mode must be 'absolute' or 'relative', got '" + s + "'");
}

HeadKind head_kind_from_string(const std::string& s) {
  if (s == "diffusion") return HeadKind::kDiffusion;
  if (s == "flow") return HeadKind::kFlow;
  throw Error(ErrorCode::kConfig, "head kind must be 'diffusion' or 'flow', got '" + s + "'");
}

void PolicyConfig::validate() const {
  require(obs_window >= 1, "policy.obs_window must be >= 1");
  require(horizon >= 1, "policy.horizon must be >= 1");
  require(diffusion_steps >= 1, "policy.diffusion_steps must be >= 1");
  require(sample_steps >= 1, "policy.sample_steps must be >= 1");
  require(head_kind == HeadKind::kFlow || sample_steps <= diffusion_steps,
          "policy.sample_steps must not exceed policy.diffusion_steps");
  require(min_half_range > 0.0, "policy.min_half_range must be positive");
  require(head.hidden >= 1 && head.blocks >= 0, "head.hidden must be >= 1 and head.blocks >= 0");
  require(head.time_dim >= 2 && head.time_dim % 2 == 0, "head.time_dim must be even and >= 2");
  vn.validate();
  enc.validate();
}

Normalizer Normalizer::identity(int dim) {
  return {Eigen::RowVectorXd::Zero(dim), Eigen::RowVectorXd::Ones(dim)};
}

Normalizer Normalizer::fit(const Eigen::MatrixXd& rows, double min_half) {
  if (rows.rows() == 0) throw Error(ErrorCode::kConfig, "cannot fit a normalizer on zero rows");
  const Eigen::RowVectorXd lo = rows.colwise().minCoeff();
  const Eigen::RowVectorXd hi = rows.colwise().maxCoeff();
  Normalizer n;
  n.center = 0.5 * (lo + hi);
  n.half = (0.5 * (hi - lo)).cwiseMax(min_half);
  return n;
}

Eigen::MatrixXd Normalizer::normalize(const Eigen::MatrixXd& rows) const {
  return (rows.rowwise() - center).array().rowwise() / half.array();
}

Eigen::MatrixXd Normalizer::denormalize(const Eigen::MatrixXd& rows) const {
  return (rows.array().rowwise() * half.array()).matrix().rowwise() + center;
}

DiffusionSchedule DiffusionSchedule::cosine(int k) {
  require(k >= 1, "diffusion step count must be >= 1");
  constexpr double s = 0.008;
  auto f = [&](double t) {
    const double c = std::cos((t / k + s) / (1.0 + s) * std::numbers::pi / 2.0);
    return c * c;
  };
  DiffusionSchedule d;
  d.betas.resize(k);
  d.alpha_bars.resize(k);
  double prod = 1.0;
  for (int i = 0; i < k; ++i) {
    d.betas[i] = std::min(1.0 - f(i + 1.0) / f(i), 0.999);
    prod *= 1.0 - d.betas[i];
    d.alpha_bars[i] = prod;
  }
  return d;
}

Eigen::RowVectorXd time_embedding(double tau, int dim) {
  const int half = dim / 2;
  Eigen::RowVectorXd e(dim);
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    e(i) = std::sin(tau * freq);
    e(half + i) = std::cos(tau * freq);
  }
  return e;
}

ParamSet HeadParams::init(const PolicyConfig& cfg, std::uint64_t seed, bool zero_output) {
  cfg.validate();
  const int d = cfg.action_dim(), h = cfg.head.hidden, c = cfg.cond_dim() + cfg.head.time_dim;
  ParamSet ps;
  ps.add("head.in.w", d, h);
  ps.add("head.in.b", 1, h);
  for (int b = 0; b < cfg.head.blocks; ++b) {
    const std::string p = "head.block" + std::to_string(b);
    ps.add(p + ".film.w", c, 2 * h);
    ps.add(p + ".film.b", 1, 2 * h);
    ps.add(p + ".l1.w", h, h);
    ps.add(p + ".l1.b", 1, h);
    ps.add(p + ".l2.w", h, h);
    ps.add(p + ".l2.b", 1, h);
  }
  ps.add("head.out.w", h, d);
  ps.add("head.out.b", 1, d);
  std::mt19937_64 rng(seed);
  const std::size_t out = out_base(cfg);
  for (std::size_t i = 0; i < ps.size(); i += 2) {
    if (i == out && zero_output) continue;
    fill_uniform(ps[i], rng);
  }
  return ps;
}

std::size_t HeadParams::param_count(const PolicyConfig& cfg) {
  const std::size_t d = static_cast<std::size_t>(cfg.action_dim());
  const std::size_t h = static_cast<std::size_t>(cfg.head.hidden);
  const std::size_t c = static_cast<std::size_t>(cfg.cond_dim() + cfg.head.time_dim);
  const std::size_t block = c * 2 * h + 2 * h + 2 * (h * h + h);
  return d * h + h + static_cast<std::size_t>(cfg.head.blocks) * block + h * d + d;
}

Var denoiser_forward(Tape& t, Var a, Var cond, std::span<const double> tau, const PolicyConfig& cfg,
                     const ParamSet& head, ParamSet* grads) {
  const Eigen::Index rows = t.value(a).rows();
  if (t.value(cond).rows() != rows || static_cast<Eigen::Index>(tau.size()) != rows) {
    throw Error(ErrorCode::kShapeMismatch, "denoiser batch sizes disagree");
  }
  if (t.value(a).cols() != cfg.action_dim() || t.value(cond).cols() != cfg.cond_dim()) {
    throw Error(ErrorCode::kShapeMismatch, "denoiser input widths do not match the policy config");
  }
  const int h = cfg.head.hidden;
  const std::array<Var, 2> parts{cond, t.constant(time_matrix(tau, cfg.head.time_dim))};
  const Var c = ad::concat_cols(t, parts);
  Var x = linear(t, a, head, kIn, grads);
  for (int b = 0; b < cfg.head.blocks; ++b) {
    const std::size_t base = block_base(b);
    const Var film = linear(t, c, head, base, grads);
    const Var gamma = ad::slice_cols(t, film, 0, h);
    const Var beta = ad::slice_cols(t, film, h, h);
    Var r = ad::silu(t, linear(t, x, head, base + 2, grads));
    r = ad::add(t, ad::add(t, r, ad::mul(t, r, gamma)), beta);
    r = linear(t, r, head, base + 4, grads);
    x = ad::add(t, x, r);
  }
  return linear(t, ad::silu(t, x), head, out_base(cfg), grads);
}

Eigen::MatrixXd denoise(const Eigen::MatrixXd& a, const Eigen::MatrixXd& cond, std::span<const double> tau,
                        const PolicyConfig& cfg, const ParamSet& head) {
  Tape t;
  const Var out = denoiser_forward(t, t.constant(a), t.constant(cond), tau, cfg, head, nullptr);
  return t.value(out);
}

Eigen::MatrixXd ddim_sample(const DiffusionSchedule& sched, int steps, const Predictor& eps,
                            Eigen::MatrixXd x) {
  const int k = sched.steps();
  if (steps < 1 || steps > k) throw Error(ErrorCode::kConfig, "DDIM steps must be in [1, K]");
  std::vector<int> ts(static_cast<std::size_t>(steps));
  for (int j = 0; j < steps; ++j) ts[static_cast<std::size_t>(j)] = static_cast<int>((static_cast<long>(j) * k) / steps);
  std::vector<double> tau(static_cast<std::size_t>(x.rows()));
  for (int j = steps - 1; j >= 0; --j) {
    const int ti = ts[static_cast<std::size_t>(j)];
    std::fill(tau.begin(), tau.end(), static_cast<double>(ti));
    const double ab = sched.alpha_bars[ti];
    const double ab_prev = j > 0 ? sched.alpha_bars[ts[static_cast<std::size_t>(j - 1)]] : 1.0;
    const Eigen::MatrixXd e = eps(x, tau);
    const Eigen::MatrixXd x0 = (x - std::sqrt(1.0 - ab) * e) / std::sqrt(ab);
    x = std::sqrt(ab_prev) * x0 + std::sqrt(1.0 - ab_prev) * e;
  }
  return x;
}

Eigen::MatrixXd flow_sample(int steps, double k_scale, const Predictor& vel, Eigen::MatrixXd x) {
  if (steps < 1) throw Error(ErrorCode::kConfig, "flow steps must be >= 1");
  const double dt = 1.0 / steps;
  std::vector<double> tau(static_cast<std::size_t>(x.rows()));
  for (int i = 0; i < steps; ++i) {
    std::fill(tau.begin(), tau.end(), i * dt * k_scale);
    x += dt * vel(x, tau);
  }
  return x;
}

Policy Policy::init(const PolicyConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Policy p;
  p.cfg = cfg;
  p.vn = VNParams::init(cfg.vn, splitmix64(seed));
  p.enc = EncoderParams::init(cfg.enc, splitmix64(seed + 1));
  p.head = HeadParams::init(cfg, splitmix64(seed + 2));
  p.norm = Normalizer::identity(cfg.action_dim());
  return p;
}

std::size_t Policy::num_params() const {
  return vn.weights.num_scalars() + enc.weights.num_scalars() + head.num_scalars();
}

double Policy::phi_share() const {
  return static_cast<double>(vn.weights.num_scalars()) / static_cast<double>(num_params());
}

PolicyGrads PolicyGrads::zeros_like(const Policy& p) {
  return {p.vn.weights.zeros_like(), p.enc.weights.zeros_like(), p.head.zeros_like()};
}

bool PolicyGrads::all_finite() const {
  return vn.flat().allFinite() && enc.flat().allFinite() && head.flat().allFinite();
}

WindowGraph build_window(Tape& t, const Policy& p, const Demo& demo, ParamSet* vn_grads, ParamSet* enc_grads,
                         bool normalize_target) {
  const PolicyConfig& cfg = p.cfg;
  const int m = cfg.obs_window;
  if (static_cast<int>(demo.obs.size()) != m) {
    throw Error(ErrorCode::kShapeMismatch, "observation window length does not match policy.obs_window");
  }
  const Observation& latest = demo.obs.back();
  WindowGraph w;
  Vec3 mean = Vec3::Zero();
  Var latest_cn;
  if (cfg.canonicalize) {
    const vn::Graph g = vn::canonicalize(t, latest.cloud, p.vn, vn_grads);
    w.rotation = g.rotation;
    mean = g.mean;
    latest_cn = g.x_cn;
    w.frame.degenerate = g.degenerate;
    w.frame.T = {Rotation::unchecked(t.value(g.rotation)), g.mean};
  } else {
    w.rotation = t.constant(Matrix::Identity(3, 3));
    latest_cn = t.constant(latest.cloud.points());
  }
  const Var r = w.rotation;

  std::vector<Var> parts;
  for (int j = 0; j < m; ++j) {
    Var cn = latest_cn;
    if (j != m - 1) {
      const PointMatrix de = demo.obs[static_cast<std::size_t>(j)].cloud.points().rowwise() - mean.transpose();
      cn = ad::matmul(t, t.constant(de), r);
    }
    parts.push_back(enc::encode(t, cn, p.enc, enc_grads));
  }

  // Poses enter as rows (position - mean, first and second orientation
  // column) so that one right-multiplication by R applies R^T to each.
  Matrix rows(3 * m, 3);
  Matrix grips(m, 1);
  for (int j = 0; j < m; ++j) {
    const RobotState& s = demo.obs[static_cast<std::size_t>(j)].state;
    rows.row(3 * j) = row_of(s.pos - mean);
    rows.row(3 * j + 1) = row_of(s.ori.col(0));
    rows.row(3 * j + 2) = row_of(s.ori.col(1));
    grips(j, 0) = s.grip;
  }
  {
    const Var geo = ad::reshape(t, ad::matmul(t, t.constant(rows), r), m, 9);
    const std::array<Var, 2> cols{geo, t.constant(grips)};
    parts.push_back(ad::reshape(t, ad::concat_cols(t, cols), 1, m * PolicyConfig::kStateDim));
  }
  w.cond = ad::concat_cols(t, parts);

  if (!demo.poses.empty()) {
    const int n = cfg.horizon;
    if (static_cast<int>(demo.poses.size()) != n || static_cast<int>(demo.grips.size()) != n) {
      throw Error(ErrorCode::kShapeMismatch, "demo action count does not match policy.horizon");
    }
    Matrix agrip(n, 1);
    for (int k = 0; k < n; ++k) agrip(k, 0) = demo.grips[static_cast<std::size_t>(k)];
    Var target;
    if (cfg.action_mode == ActionMode::kAbsolute) {
      Matrix q(3 * n, 3);
      for (int k = 0; k < n; ++k) {
        const RigidTransform& a = demo.poses[static_cast<std::size_t>(k)];
        q.row(3 * k) = row_of(a.trans - mean);
        q.row(3 * k + 1) = row_of(a.rot.col(0));
        q.row(3 * k + 2) = row_of(a.rot.col(1));
      }
      const Var geo = ad::reshape(t, ad::matmul(t, t.constant(q), r), n, 9);
      const std::array<Var, 2> cols{geo, t.constant(agrip)};
      target = ad::reshape(t, ad::concat_cols(t, cols), 1, n * 10);
    } else {
      const auto rel = relatives_from_poses(latest.state.pose(), demo.poses, demo.grips);
      // Conjugation T^-1 dA T with T = (R, mean): translation
      // R^T (dR mean + dp - mean), axis-angle R^T v.
      Matrix q(2 * n, 3);
      for (int k = 0; k < n; ++k) {
        const RigidTransform d = rel[static_cast<std::size_t>(k)].displacement();
        q.row(2 * k) = row_of(d.rot * mean + d.trans - mean);
        q.row(2 * k + 1) = row_of(rel[static_cast<std::size_t>(k)].dori.v);
      }
      const Var geo = ad::reshape(t, ad::matmul(t, t.constant(q), r), n, 6);
      const std::array<Var, 2> cols{geo, t.constant(agrip)};
      target = ad::reshape(t, ad::concat_cols(t, cols), 1, n * 7);
    }
    if (normalize_target) {
      if (p.norm.center.size() != cfg.action_dim()) {
        throw Error(ErrorCode::kShapeMismatch, "normalizer width does not match the action dimension");
      }
      target = ad::affine_const(t, target, p.norm.center, p.norm.half.cwiseInverse());
    }
    w.target = target;
  }
  return w;
}

Eigen::MatrixXd canonical_targets(const Policy& p, std::span<const Demo> demos) {
  Eigen::MatrixXd rows(static_cast<Eigen::Index>(demos.size()), p.cfg.action_dim());
  for (std::size_t i = 0; i < demos.size(); ++i) {
    Tape t;
    const WindowGraph w = build_window(t, p, demos[i], nullptr, nullptr, false);
    if (!w.target.valid()) throw Error(ErrorCode::kShapeMismatch, "demo carries no actions");
    rows.row(static_cast<Eigen::Index>(i)) = t.value(w.target);
  }
  return rows;
}

LossNoise draw_loss_noise(const PolicyConfig& cfg, int batch, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  LossNoise n;
  n.noise = standard_normal(rng, batch, cfg.action_dim());
  n.level.resize(static_cast<std::size_t>(batch));
  if (cfg.head_kind == HeadKind::kDiffusion) {
    std::uniform_int_distribution<int> k(0, cfg.diffusion_steps - 1);
    for (auto& v : n.level) v = k(rng);
  } else {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& v : n.level) v = u(rng);
  }
  return n;
}

Var batch_loss(Tape& t, const Policy& p, std::span<const Demo* const> batch, const LossNoise& noise,
               PolicyGrads* grads, bool freeze_phi) {
  const PolicyConfig& cfg = p.cfg;
  const auto b = static_cast<Eigen::Index>(batch.size());
  if (b == 0 || noise.noise.rows() != b || static_cast<Eigen::Index>(noise.level.size()) != b) {
    throw Error(ErrorCode::kShapeMismatch, "loss noise does not match the batch");
  }
  ParamSet* vg = grads && !freeze_phi ? &grads->vn : nullptr;
  ParamSet* eg = grads ? &grads->enc : nullptr;
  ParamSet* hg = grads ? &grads->head : nullptr;
  std::vector<Var> conds, targets;
  for (const Demo* d : batch) {
    const WindowGraph w = build_window(t, p, *d, vg, eg, true);
    if (!w.target.valid()) throw Error(ErrorCode::kShapeMismatch, "demo carries no actions");
    conds.push_back(w.cond);
    targets.push_back(w.target);
  }
  const Var cond = ad::concat_rows(t, conds);
  const Var a0 = ad::concat_rows(t, targets);
  const Eigen::Index d = cfg.action_dim();
  Matrix ca(b, d), cn(b, d);
  std::vector<double> tau(static_cast<std::size_t>(b));
  if (cfg.head_kind == HeadKind::kDiffusion) {
    const DiffusionSchedule sched = DiffusionSchedule::cosine(cfg.diffusion_steps);
    for (Eigen::Index i = 0; i < b; ++i) {
      const int k = static_cast<int>(noise.level[static_cast<std::size_t>(i)]);
      ca.row(i).setConstant(std::sqrt(sched.alpha_bars[k]));
      cn.row(i).setConstant(std::sqrt(1.0 - sched.alpha_bars[k]));
      tau[static_cast<std::size_t>(i)] = k;
    }
    const Var ak = ad::add(t, ad::mul(t, a0, t.constant(ca)), t.constant(cn.cwiseProduct(noise.noise)));
    const Var eps_hat = denoiser_forward(t, ak, cond, tau, cfg, p.head, hg);
    return ad::mse(t, eps_hat, t.constant(noise.noise));
  }
  for (Eigen::Index i = 0; i < b; ++i) {
    const double s = noise.level[static_cast<std::size_t>(i)];
    ca.row(i).setConstant(s);
    cn.row(i).setConstant(1.0 - s);
    tau[static_cast<std::size_t>(i)] = s * cfg.diffusion_steps;
  }
  const Var at = ad::add(t, ad::mul(t, a0, t.constant(ca)), t.constant(cn.cwiseProduct(noise.noise)));
  const Var v_hat = denoiser_forward(t, at, cond, tau, cfg, p.head, hg);
  return ad::mse(t, v_hat, ad::sub(t, a0, t.constant(noise.noise)));
}

double loss_and_grad(const Policy& p, std::span<const Demo* const> batch, const LossNoise& noise,
                     PolicyGrads& grads, bool freeze_phi) {
  Tape t;
  const Var loss = batch_loss(t, p, batch, noise, &grads, freeze_phi);
  const double v = t.value(loss)(0, 0);
  if (t.requires_grad(loss)) t.backward(loss);
  return v;
}

Rollout policy_rollout(const Policy& p, std::span<const Observation> window, std::uint64_t seed) {
  const PolicyConfig& cfg = p.cfg;
  if (p.norm.center.size() != cfg.action_dim()) {
    throw Error(ErrorCode::kShapeMismatch, "normalizer width does not match the action dimension");
  }
  Demo demo;
  demo.obs.assign(window.begin(), window.end());
  Tape t;
  const WindowGraph w = build_window(t, p, demo, nullptr, nullptr);
  const Matrix cond = t.value(w.cond);

  std::mt19937_64 rng(seed);
  Matrix x0 = standard_normal(rng, 1, cfg.action_dim());
  const Predictor model = [&](const Eigen::MatrixXd& x, std::span<const double> tau) {
    return denoise(x, cond.replicate(x.rows(), 1), tau, cfg, p.head);
  };
  Rollout out;
  out.frame = w.frame;
  out.canonical = cfg.head_kind == HeadKind::kDiffusion
                      ? ddim_sample(DiffusionSchedule::cosine(cfg.diffusion_steps), cfg.sample_steps, model, x0)
                      : flow_sample(cfg.sample_steps, cfg.diffusion_steps, model, x0);
  const Eigen::RowVectorXd raw = p.norm.denormalize(out.canonical);
  const int sd = cfg.step_dim();
  const RobotState& now = window.back().state;
  if (cfg.action_mode == ActionMode::kAbsolute) {
    for (int k = 0; k < cfg.horizon; ++k) {
      const auto s = raw.segment(k * sd, sd);
      AbsoluteAction a{Vec3(s(0), s(1), s(2)), SixDRotation{Vec3(s(3), s(4), s(5)), Vec3(s(6), s(7), s(8))}, s(9)};
      out.absolute.push_back(decanon_action_abs(a, out.frame));
    }
    out.final_pose = out.absolute.back().pose();
  } else {
    for (int k = 0; k < cfg.horizon; ++k) {
      const auto s = raw.segment(k * sd, sd);
      const RelativeAction d{Vec3(s(0), s(1), s(2)), AxisAngle{Vec3(s(3), s(4), s(5))}, s(6)};
      out.relative.push_back(decanon_action_rel(d, out.frame));
    }
    out.final_pose = chain_relatives(now.pose(), out.relative).back();
  }
  return out;
}

Adam::Adam(const ParamSet& like, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(like.zeros_like()), v_(like.zeros_like()) {}

void Adam::step(ParamSet& params, const ParamSet& grads) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i].cwiseProduct(grads[i]);
    params[i].array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

TrainResult train(Policy& p, std::span<const Demo> data, const TrainConfig& tc, std::ostream* metrics,
                  const std::function<void(const Policy&, int)>& on_checkpoint) {
  p.cfg.validate();
  require(!data.empty(), "training set is empty");
  require(tc.epochs >= 0 && tc.batch_size >= 1, "train.epochs must be >= 0 and train.batch_size >= 1");
  require(tc.lr > 0.0, "train.lr must be positive");
  if (p.norm.center.size() != p.cfg.action_dim() || p.norm == Normalizer::identity(p.cfg.action_dim())) {
    p.norm = Normalizer::fit(canonical_targets(p, data), p.cfg.min_half_range);
  }
  Adam opt_vn(p.vn.weights, tc.lr, tc.beta1, tc.beta2);
  Adam opt_enc(p.enc.weights, tc.lr, tc.beta1, tc.beta2);
  Adam opt_head(p.head, tc.lr, tc.beta1, tc.beta2);

  std::mt19937_64 rng(tc.seed);
  std::vector<std::size_t> order(data.size());
  TrainResult res;
  PolicyGrads grads = PolicyGrads::zeros_like(p);
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(tc.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(tc.batch_size));
      std::vector<const Demo*> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(&data[order[i]]);
      const LossNoise noise =
          draw_loss_noise(p.cfg, static_cast<int>(batch.size()), splitmix64(tc.seed ^ splitmix64(res.steps)));
      grads.vn.set_zero();
      grads.enc.set_zero();
      grads.head.set_zero();
      const double loss = loss_and_grad(p, batch, noise, grads, tc.freeze_phi);
      if (!tc.freeze_phi) opt_vn.step(p.vn.weights, grads.vn);
      opt_enc.step(p.enc.weights, grads.enc);
      opt_head.step(p.head, grads.head);
      res.losses.push_back(loss);
      ++res.steps;

      if (metrics && tc.log_every > 0 && res.steps % tc.log_every == 0) {
        const auto emit = [&](const char* name, double v) {
          std::array<char, 64> buf;
          const auto r = std::to_chars(buf.data(), buf.data() + buf.size(), v);
          *metrics << res.steps << ' ' << name << ' ' << std::string_view(buf.data(), r.ptr) << '\n';
        };
        emit("loss", loss);
        const Demo& d = *batch.front();
        if (p.cfg.canonicalize) {
          const Canonicalization cur = estimate_rotation(d.obs.back().cloud, p.vn);
          if (d.obs.size() >= 2) {
            const Canonicalization prev = estimate_rotation(d.obs[d.obs.size() - 2].cloud, p.vn);
            const FrameDrift drift = frame_drift({prev.frame, prev.degenerate}, {cur.frame, cur.degenerate});
            emit("frame_drift_angle", drift.angle);
            emit("frame_drift_translation", drift.translation);
          }
          const RigidTransform h = random_se3(splitmix64(tc.seed + static_cast<std::uint64_t>(res.steps)),
                                              p.cfg.vn.mode, 1.0);
          const Canonicalization moved = estimate_rotation(transform(d.obs.back().cloud, h), p.vn);
          emit("equivariance_residual", max_point_distance(cur.x_cn, moved.x_cn));
        }
      }
      if (on_checkpoint && tc.checkpoint_every > 0 && res.steps % tc.checkpoint_every == 0) on_checkpoint(p, res.steps);
    }
  }
  return res;
}

void write_checkpoint(std::ostream& out, const Policy& p) {
  write_vnp1(out, p.vn);
  write_enc1(out, p.enc);
  const PolicyConfig& c = p.cfg;
  io::write_magic(out, "HEAD");
  for (const int v : {c.obs_window, c.horizon, c.action_mode == ActionMode::kAbsolute ? 0 : 1,
                      c.head_kind == HeadKind::kDiffusion ? 0 : 1, c.diffusion_steps, c.sample_steps,
                      c.canonicalize ? 1 : 0, c.head.hidden, c.head.blocks, c.head.time_dim}) {
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(v));
  }
  io::write_le<double>(out, c.min_half_range);
  const auto d = static_cast<std::uint32_t>(p.norm.center.size());
  io::write_le<std::uint32_t>(out, d);
  for (std::uint32_t i = 0; i < d; ++i) io::write_le<double>(out, p.norm.center(i));
  for (std::uint32_t i = 0; i < d; ++i) io::write_le<double>(out, p.norm.half(i));
  const Eigen::VectorXd flat = p.head.flat();
  io::write_le<std::uint64_t>(out, static_cast<std::uint64_t>(flat.size()));
  for (Eigen::Index i = 0; i < flat.size(); ++i) io::write_le<double>(out, flat[i]);
  if (!out) throw Error(ErrorCode::kIo, "failed to write checkpoint");
}

Policy read_checkpoint(std::istream& in) {
  Policy p;
  p.vn = read_vnp1(in);
  p.enc = read_enc1(in);
  io::expect_magic(in, "HEAD");
  std::array<std::uint32_t, 10> h{};
  for (auto& v : h) v = io::read_le<std::uint32_t>(in);
  PolicyConfig& c = p.cfg;
  if (h[2] > 1 || h[3] > 1 || h[6] > 1) throw Error(ErrorCode::kFormat, "HEAD block has an invalid enum field");
  c.obs_window = static_cast<int>(h[0]);
  c.horizon = static_cast<int>(h[1]);
  c.action_mode = h[2] == 0 ? ActionMode::kAbsolute : ActionMode::kRelative;
  c.head_kind = h[3] == 0 ? HeadKind::kDiffusion : HeadKind::kFlow;
  c.diffusion_steps = static_cast<int>(h[4]);
  c.sample_steps = static_cast<int>(h[5]);
  c.canonicalize = h[6] == 1;
  c.head.hidden = static_cast<int>(h[7]);
  c.head.blocks = static_cast<int>(h[8]);
  c.head.time_dim = static_cast<int>(h[9]);
  c.min_half_range = io::read_le<double>(in);
  c.vn = p.vn.cfg;
  c.enc = p.enc.cfg;
  try {
    c.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::kFormat, std::string("HEAD block: ") + e.what());
  }
  const auto d = io::read_le<std::uint32_t>(in);
  if (static_cast<int>(d) != c.action_dim()) throw Error(ErrorCode::kFormat, "HEAD normalizer width mismatch");
  p.norm = Normalizer::identity(static_cast<int>(d));
  for (std::uint32_t i = 0; i < d; ++i) p.norm.center(i) = io::read_le<double>(in);
  for (std::uint32_t i = 0; i < d; ++i) p.norm.half(i) = io::read_le<double>(in);
  p.head = HeadParams::init(c, 0);
  const auto count = io::read_le<std::uint64_t>(in);
  if (count != p.head.num_scalars()) throw Error(ErrorCode::kFormat, "HEAD parameter count mismatch");
  Eigen::VectorXd flat(static_cast<Eigen::Index>(count));
  for (Eigen::Index i = 0; i < flat.size(); ++i) flat[i] = io::read_le<double>(in);
  p.head.set_flat(flat);
  return p;
}

void save_checkpoint(const std::filesystem::path& path, const Policy& p) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  write_checkpoint(out, p);
}

Policy load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return read_checkpoint(in);
}

}  // namespace cpol
