// Copyright 2026 The canonpolicy Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <random>

#include "canonpolicy/harness.hpp"

namespace cpol {

namespace {

using ad::Matrix;

CheckResult check(std::string name, double value, double tol) {
  return {std::move(name), value, tol, value < tol};
}

Matrix gaussian(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

PointCloud gaussian_cloud(std::mt19937_64& rng, Eigen::Index n) { return PointCloud(PointMatrix(gaussian(rng, n, 3))); }

PointCloud rotate_cloud(const PointCloud& x, const Rotation& r) { return transform(x, {r, Vec3::Zero()}); }

double pose_gap(const RigidTransform& a, const RigidTransform& b) {
  return std::max((a.trans - b.trans).cwiseAbs().maxCoeff(), (a.rot.matrix() - b.rot.matrix()).cwiseAbs().maxCoeff());
}

// Raw action row of a list of actions expressed in one frame.
Eigen::RowVectorXd action_row(const PolicyConfig& cfg, const Rollout& r) {
  Eigen::RowVectorXd row(cfg.action_dim());
  const int sd = cfg.step_dim();
  for (int k = 0; k < cfg.horizon; ++k) {
    if (cfg.action_mode == ActionMode::kAbsolute) {
      const AbsoluteAction& a = r.absolute[static_cast<std::size_t>(k)];
      row.segment<3>(k * sd) = a.pos.transpose();
      row.segment<3>(k * sd + 3) = a.ori_sixd.a1.transpose();
      row.segment<3>(k * sd + 6) = a.ori_sixd.a2.transpose();
      row(k * sd + 9) = a.grip;
    } else {
      const RelativeAction& d = r.relative[static_cast<std::size_t>(k)];
      row.segment<3>(k * sd) = d.dpos.transpose();
      row.segment<3>(k * sd + 3) = d.dori.v.transpose();
      row(k * sd + 6) = d.grip;
    }
  }
  return row;
}

// Moves a rollout's world-frame actions into `frame` after undoing `h`.
Rollout pulled_back(const PolicyConfig& cfg, const Rollout& r, const RigidTransform& h, const CanonicalFrame& frame) {
  Rollout out;
  const RigidTransform hi = inverse(h);
  for (const AbsoluteAction& a : r.absolute) {
    out.absolute.push_back(canon_action_abs(AbsoluteAction::from_pose(compose(hi, a.pose()), a.grip), frame));
  }
  for (const RelativeAction& d : r.relative) {
    const RigidTransform moved = compose(compose(hi, d.displacement()), h);
    out.relative.push_back(canon_action_rel(RelativeAction::from_displacement(moved, d.grip), frame));
  }
  (void)cfg;
  return out;
}

double max_fd_error(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x0,
                    const Eigen::VectorXd& analytic, std::mt19937_64& rng, int samples) {
  std::vector<Eigen::Index> coords;
  if (x0.size() <= samples) {
    for (Eigen::Index i = 0; i < x0.size(); ++i) coords.push_back(i);
  } else {
    std::uniform_int_distribution<Eigen::Index> pick(0, x0.size() - 1);
    for (int k = 0; k < samples; ++k) coords.push_back(pick(rng));
  }
  constexpr double h = 1e-5;
  const double f0 = f(x0);
  std::vector<double> num, ana;
  Eigen::VectorXd x = x0;
  for (const Eigen::Index i : coords) {
    x[i] = x0[i] + h;
    const double fp = f(x);
    x[i] = x0[i] - h;
    const double fm = f(x);
    x[i] = x0[i];
    const double c = (fp - fm) / (2.0 * h);
    // One-sided slopes that disagree mean the step straddles a kink of a
    // piecewise activation; central differences are meaningless there.
    if (std::abs((fp - f0) - (f0 - fm)) / h > 1e-2 * std::abs(c) + 1e-4) continue;
    num.push_back(c);
    ana.push_back(analytic[i]);
  }
  if (2 * num.size() < coords.size()) return 1.0;
  const Eigen::Map<const Eigen::VectorXd> n(num.data(), static_cast<Eigen::Index>(num.size()));
  const Eigen::Map<const Eigen::VectorXd> a(ana.data(), static_cast<Eigen::Index>(ana.size()));
  const double denom = std::max({n.norm(), a.norm(), 1e-300});
  return (n - a).norm() / denom;
}

PolicyConfig tiny(const PolicyConfig& base) {
  PolicyConfig c = base;
  c.obs_window = 2;
  c.horizon = 2;
  c.vn.repeat_layers = 2;
  c.vn.feat_dim = 6;
  c.vn.q = 4;
  c.enc.q = 4;
  c.enc.widths = {8};
  c.enc.out_dim = 5;
  c.head.hidden = 8;
  c.head.blocks = 1;
  c.head.time_dim = 4;
  c.diffusion_steps = 10;
  c.sample_steps = 5;
  return c;
}

}  // namespace

std::vector<CheckResult> equivariance_suite(const PolicyConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::vector<CheckResult> out;
  std::mt19937_64 rng(seed);
  const RotMode mode = cfg.vn.mode;

  {
    const VNParams params = VNParams::init(cfg.vn, seed);
    double e_edge = 0, e_lin = 0, e_act = 0, e_pool = 0, e_phi = 0;
    for (int trial = 0; trial < 20; ++trial) {
      const Rotation r = random_rotation(rng);
      const PointCloud x = decenter(gaussian_cloud(rng, 32)).cloud;
      const PointCloud y = rotate_cloud(x, r);
      const VNFeature fx = edge_features(x, knn_graph(x, cfg.vn.q));
      e_edge = std::max(e_edge, relative_error(edge_features(y, knn_graph(y, cfg.vn.q)), rotate(fx, r)));
      const Matrix w = gaussian(rng, 3, 5), u = gaussian(rng, 3, 3);
      e_lin = std::max(e_lin, relative_error(vn_linear(rotate(fx, r), w), rotate(vn_linear(fx, w), r)));
      e_act = std::max(e_act, relative_error(vn_activation(rotate(fx, r), u), rotate(vn_activation(fx, u), r)));
      e_pool = std::max(e_pool, relative_error(vn_mean_pool(rotate(fx, r)), rotate(vn_mean_pool(fx), r)));
      const PhiOutput a = forward_phi(x, params), b = forward_phi(y, params);
      const double s = std::max({a.r1.norm(), a.r2.norm(), 1.0});
      e_phi = std::max({e_phi, (b.r1 - r * a.r1).norm() / s, (b.r2 - r * a.r2).norm() / s});
    }
    out.push_back(check("edge_features equivariance", e_edge, 1e-6));
    out.push_back(check("vn_linear equivariance", e_lin, 1e-6));
    out.push_back(check("vn_activation equivariance", e_act, 1e-6));
    out.push_back(check("vn_mean_pool equivariance", e_pool, 1e-6));
    out.push_back(check("forward_phi equivariance", e_phi, 1e-6));
  }

  {
    const VNParams params = VNParams::init(cfg.vn, seed + 1);
    double worst = 0.0;
    for (const SceneTemplate& t : builtin_templates()) {
      if (t.points.size() <= cfg.vn.q) continue;
      const PointCloud ref = estimate_rotation(t.points, params).x_cn;
      for (int trial = 0; trial < 20; ++trial) {
        const PointCloud y = transform(t.points, random_se3(rng, mode, 1.0));
        worst = std::max(worst, max_point_distance(estimate_rotation(y, params).x_cn, ref));
      }
    }
    out.push_back(check(std::string("canonical consistency (") + to_string(mode) + ")", worst, 1e-5));
  }

  {
    double e_state = 0, e_abs = 0, e_rel = 0, e_chain = 0;
    for (int trial = 0; trial < 200; ++trial) {
      const CanonicalFrame f{random_se3(rng, RotMode::kSO3, 1.0), false};
      const RobotState s = RobotState::from_pose(random_se3(rng, RotMode::kSO3, 1.0), 0.5);
      e_state = std::max(e_state, pose_gap(decanon_state(canon_state(s, f), f).pose(), s.pose()));
      const AbsoluteAction a = AbsoluteAction::from_pose(random_se3(rng, RotMode::kSO3, 1.0), 0.5);
      e_abs = std::max(e_abs, pose_gap(decanon_action_abs(canon_action_abs(a, f), f).pose(), a.pose()));
      const RelativeAction d = RelativeAction::from_displacement(random_se3(rng, RotMode::kSO3, 0.1), 0.5);
      e_rel = std::max(e_rel, pose_gap(decanon_action_rel(canon_action_rel(d, f), f).displacement(),
                                       d.displacement()));
      const RigidTransform start = random_se3(rng, RotMode::kSO3, 1.0);
      std::vector<RigidTransform> poses{start};
      for (int k = 0; k < 4; ++k) poses.push_back(compose(poses.back(), random_se3(rng, RotMode::kSO3, 0.05)));
      poses.erase(poses.begin());
      const std::vector<double> grips(poses.size(), 1.0);
      std::vector<RelativeAction> rel;
      for (const auto& r : relatives_from_poses(start, poses, grips)) rel.push_back(canon_action_rel(r, f));
      const auto chained = chain_relatives(compose(inverse(f.T), start), rel);
      for (std::size_t k = 0; k < poses.size(); ++k) {
        e_chain = std::max(e_chain, pose_gap(chained[k], compose(inverse(f.T), poses[k])));
      }
    }
    out.push_back(check("state round trip", e_state, 1e-10));
    out.push_back(check("absolute action round trip", e_abs, 1e-10));
    out.push_back(check("relative action round trip", e_rel, 1e-10));
    out.push_back(check("relative chain under a fixed frame", e_chain, 1e-10));
  }

  {
    Policy p = Policy::init(cfg, seed + 2);
    p.head = HeadParams::init(cfg, seed + 3, false);
    const int tid = template_index("box_stack");
    DataConfig dc;
    const EpisodeRecord ep =
        generate_episode(builtin_templates()[static_cast<std::size_t>(tid)], tid, dc, cfg.obs_window, cfg.horizon, mode, seed);
    const Rollout base = policy_rollout(p, ep.demo.obs, seed);
    const Eigen::RowVectorXd ref = p.norm.normalize(action_row(cfg, pulled_back(cfg, base, RigidTransform{}, base.frame)));
    double worst = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
      const RigidTransform h = random_se3(rng, mode, 1.0);
      const Rollout moved = policy_rollout(p, transform_episode(ep, h).demo.obs, seed);
      const Eigen::RowVectorXd row = p.norm.normalize(action_row(cfg, pulled_back(cfg, moved, h, base.frame)));
      worst = std::max(worst, (row - ref).cwiseAbs().maxCoeff());
    }
    out.push_back(check("policy_rollout equivariance", worst, 1e-3));
  }
  return out;
}

std::vector<CheckResult> gradient_suite(const PolicyConfig& base, std::uint64_t seed) {
  std::vector<CheckResult> out;
  std::mt19937_64 rng(seed);
  const PolicyConfig cfg = tiny(base);

  {
    const VNParams params = VNParams::init(cfg.vn, seed);
    const PointCloud x = gaussian_cloud(rng, 16);
    const Matrix w = gaussian(rng, 16, 3);
    auto loss = [&](const VNParams& ps, ad::ParamSet* g) {
      ad::Tape t;
      const vn::Graph gr = vn::canonicalize(t, x, ps, g);
      const ad::Var l = ad::sum(t, ad::mul(t, gr.x_cn, t.constant(w)));
      if (g) t.backward(l);
      return t.value(l)(0, 0);
    };
    ad::ParamSet g = params.weights.zeros_like();
    loss(params, &g);
    VNParams work = params;
    const double e = max_fd_error(
        [&](const Eigen::VectorXd& v) {
          work.weights.set_flat(v);
          return loss(work, nullptr);
        },
        params.weights.flat(), g.flat(), rng, 60);
    out.push_back(check(std::string("estimator through canonicalization (") + to_string(cfg.vn.mode) + ")", e, 1e-4));
  }

  {
    EncoderParams params = EncoderParams::init(cfg.enc, seed + 1);
    for (std::size_t i = 0; i < params.weights.size(); ++i) params.weights[i] += 0.3 * gaussian(rng, params.weights[i].rows(), params.weights[i].cols());
    const PointCloud x = gaussian_cloud(rng, 16);
    const Matrix w = gaussian(rng, 1, cfg.enc.out_dim);
    auto loss = [&](const EncoderParams& ps, ad::ParamSet* g) {
      ad::Tape t;
      const ad::Var f = enc::encode(t, t.constant(x.points()), ps, g);
      const ad::Var l = ad::sum(t, ad::mul(t, f, t.constant(w)));
      if (g) t.backward(l);
      return t.value(l)(0, 0);
    };
    ad::ParamSet g = params.weights.zeros_like();
    loss(params, &g);
    EncoderParams work = params;
    const double e = max_fd_error(
        [&](const Eigen::VectorXd& v) {
          work.weights.set_flat(v);
          return loss(work, nullptr);
        },
        params.weights.flat(), g.flat(), rng, 80);
    out.push_back(check("encoder", e, 1e-4));
  }

  for (const HeadKind kind : {HeadKind::kDiffusion, HeadKind::kFlow}) {
    PolicyConfig c = cfg;
    c.head_kind = kind;
    Policy p = Policy::init(c, seed + 2);
    p.head = HeadParams::init(c, seed + 3, false);
    std::vector<Demo> demos(2);
    for (Demo& d : demos) {
      for (int j = 0; j < c.obs_window; ++j) {
        d.obs.push_back({gaussian_cloud(rng, 16), RobotState::from_pose(random_se3(rng, RotMode::kSO3, 0.5), 1.0)});
      }
      for (int k = 0; k < c.horizon; ++k) {
        d.poses.push_back(random_se3(rng, RotMode::kSO3, 0.5));
        d.grips.push_back(0.5);
      }
    }
    p.norm = Normalizer::fit(canonical_targets(p, demos), 1.0);
    const std::vector<const Demo*> batch{&demos[0], &demos[1]};
    const LossNoise noise = draw_loss_noise(c, 2, seed + 4);
    PolicyGrads g = PolicyGrads::zeros_like(p);
    loss_and_grad(p, batch, noise, g, false);
    const Eigen::VectorXd flat_g =
        (Eigen::VectorXd(g.vn.num_scalars() + g.enc.num_scalars() + g.head.num_scalars()) << g.vn.flat(),
         g.enc.flat(), g.head.flat())
            .finished();
    Policy work = p;
    const auto nv = static_cast<Eigen::Index>(p.vn.weights.num_scalars());
    const auto ne = static_cast<Eigen::Index>(p.enc.weights.num_scalars());
    const auto nh = static_cast<Eigen::Index>(p.head.num_scalars());
    const Eigen::VectorXd x0 =
        (Eigen::VectorXd(nv + ne + nh) << p.vn.weights.flat(), p.enc.weights.flat(), p.head.flat()).finished();
    const double e = max_fd_error(
        [&](const Eigen::VectorXd& v) {
          work.vn.weights.set_flat(v.segment(0, nv));
          work.enc.weights.set_flat(v.segment(nv, ne));
          work.head.set_flat(v.segment(nv + ne, nh));
          ad::Tape t;
          return t.value(batch_loss(t, work, batch, noise, nullptr, false))(0, 0);
        },
        x0, flat_g, rng, 120);
    out.push_back(check(std::string(to_string(kind)) + " training loss", e, 1e-4));
    out.push_back(check(std::string(to_string(kind)) + " gradients finite", g.all_finite() ? 0.0 : 1.0, 0.5));
  }
  return out;
}

}  // namespace cpol
