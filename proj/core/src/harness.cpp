// Copyright 2026 The canonpolicy Authors
// SPDX-License-Identifier: Apache-2.0

#include "canonpolicy/harness.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <ostream>
#include <random>

#include "canonpolicy/binary_io.hpp"
#include "canonpolicy/pointcloud_io.hpp"

namespace cpol {

namespace {

constexpr double kPi = std::numbers::pi;

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Vec3 unit_vector(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Vec3 v;
  do {
    v = Vec3(g(rng), g(rng), g(rng));
  } while (v.norm() < 1e-6);
  return v.normalized();
}

// Uniform points on the surface of an axis-aligned box, faces chosen by area.
void box_surface(std::mt19937_64& rng, const Vec3& center, const Vec3& half, int count, std::vector<Vec3>& out) {
  const std::array<double, 3> area{half.y() * half.z(), half.x() * half.z(), half.x() * half.y()};
  std::discrete_distribution<int> face({area[0], area[0], area[1], area[1], area[2], area[2]});
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < count; ++i) {
    const int f = face(rng);
    const int axis = f / 2;
    Vec3 p(u(rng), u(rng), u(rng));
    p[axis] = f % 2 ? 1.0 : -1.0;
    out.push_back(center + p.cwiseProduct(half));
  }
}

SceneTemplate finish(std::string name, const std::vector<Vec3>& pts, const RigidTransform& grasp) {
  PointMatrix p(static_cast<Eigen::Index>(pts.size()), 3);
  for (std::size_t i = 0; i < pts.size(); ++i) p.row(static_cast<Eigen::Index>(i)) = pts[i].transpose();
  const Decentered d = decenter(PointCloud(std::move(p)));
  // float32-exact coordinates keep episode files lossless.
  SceneTemplate t{std::move(name), io::quantize_f32(d.cloud), grasp};
  t.grasp_offset.trans -= d.mean;
  return t;
}

SceneTemplate make_push_t() {
  // The usual T outline, with seeded jitter so that no in-plane mirror
  // symmetry survives; a symmetric T forces both estimator outputs onto
  // its axis.
  std::vector<Vec3> pts{{-0.3, 0.3, 0}, {-0.15, 0.3, 0}, {0, 0.3, 0}, {0.15, 0.3, 0}, {0.3, 0.3, 0},
                        {0, 0.15, 0},   {0, 0, 0},       {0, -0.15, 0}, {0, -0.3, 0}};
  std::mt19937_64 rng(0x7e11);
  std::uniform_real_distribution<double> u(-0.03, 0.03);
  for (Vec3& p : pts) p += Vec3(u(rng), u(rng), 0.0);
  const RigidTransform grasp{axisangle_to_rotation(AxisAngle{Vec3(kPi, 0, 0)}) * Rotation::about_z(0.4),
                             Vec3(0.02, -0.1, 0.12)};
  return finish("push_t", pts, grasp);
}

SceneTemplate make_box_stack() {
  std::mt19937_64 rng(0xb0c5);
  std::vector<Vec3> pts;
  box_surface(rng, Vec3(0, 0, 0.15), Vec3(0.25, 0.2, 0.15), 40, pts);
  box_surface(rng, Vec3(0.06, -0.03, 0.4), Vec3(0.15, 0.12, 0.1), 24, pts);
  const RigidTransform grasp{Rotation::about_z(0.3) * axisangle_to_rotation(AxisAngle{Vec3(kPi, 0, 0)}),
                             Vec3(0.06, -0.03, 0.58)};
  return finish("box_stack", pts, grasp);
}

SceneTemplate make_mug() {
  std::mt19937_64 rng(0x3a6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Vec3> pts;
  for (int i = 0; i < 104; ++i) {
    const double th = 2.0 * kPi * u(rng);
    pts.emplace_back(0.2 * std::cos(th), 0.2 * std::sin(th), 0.4 * u(rng));
  }
  for (int i = 0; i < 24; ++i) {
    const double ph = kPi * (u(rng) - 0.5);
    const double w = 0.015 * (u(rng) - 0.5);
    pts.emplace_back(0.2 + 0.09 * std::cos(ph), w, 0.22 + 0.11 * std::sin(ph));
  }
  const RigidTransform grasp{axisangle_to_rotation(AxisAngle{Vec3(0, kPi / 2, 0)}), Vec3(0.38, 0.0, 0.22)};
  return finish("mug", pts, grasp);
}

void write_pose(std::ostream& out, const RigidTransform& t) {
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) io::write_le<double>(out, t.rot.matrix()(i, j));
  }
  for (int i = 0; i < 3; ++i) io::write_le<double>(out, t.trans[i]);
}

RigidTransform read_pose(std::istream& in) {
  Mat3 r;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) r(i, j) = io::read_le<double>(in);
  }
  Vec3 t;
  for (int i = 0; i < 3; ++i) t[i] = io::read_le<double>(in);
  try {
    return {Rotation::from_matrix(r), t};
  } catch (const Error&) {
    throw Error(ErrorCode::kFormat, "EPR1 pose is not a rotation");
  }
}

std::string format_double(double v) {
  std::array<char, 64> buf;
  const auto r = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), r.ptr);
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

const std::vector<SceneTemplate>& builtin_templates() {
  static const std::vector<SceneTemplate> t{make_push_t(), make_box_stack(), make_mug()};
  return t;
}

int template_index(const std::string& name) {
  const auto& t = builtin_templates();
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i].name == name) return static_cast<int>(i);
  }
  throw Error(ErrorCode::kConfig, "unknown template '" + name + "' (push_t, box_stack, mug)");
}

RigidTransform PoseSampler::sample(std::mt19937_64& rng) const {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Rotation r;
  if (mode == RotMode::kSO2) {
    r = Rotation::about_z(max_angle * u(rng));
  } else if (max_angle >= kPi) {
    r = random_rotation(rng);
  } else {
    const Vec3 axis = unit_vector(rng);
    r = axisangle_to_rotation(AxisAngle{axis * (max_angle * 0.5 * (u(rng) + 1.0))});
  }
  Vec3 t(trans_range * u(rng), trans_range * u(rng), trans_range * u(rng));
  if (mode == RotMode::kSO2) t.z() = 0.0;
  return {r, t};
}

RigidTransform reach_pose(const RigidTransform& start, const RigidTransform& goal, double s) {
  if (s == 1.0) return goal;
  const AxisAngle v = rotation_to_axisangle(start.rot.transpose() * goal.rot);
  return {start.rot * axisangle_to_rotation(AxisAngle{s * v.v}), (1.0 - s) * start.trans + s * goal.trans};
}

EpisodeRecord generate_episode(const SceneTemplate& tmpl, int template_id, const DataConfig& cfg, int obs_window,
                               int horizon, RotMode mode, std::uint64_t seed) {
  if (obs_window < 1 || horizon < 1) throw Error(ErrorCode::kConfig, "window and horizon must be >= 1");
  std::mt19937_64 rng(seed);
  EpisodeRecord ep;
  ep.template_id = template_id;
  ep.seed = seed;
  ep.scene_pose = PoseSampler{mode, cfg.max_angle, cfg.trans_range}.sample(rng);
  const RigidTransform goal = compose(ep.scene_pose, tmpl.grasp_offset);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const Vec3 axis = unit_vector(rng);
  const RigidTransform perturb{axisangle_to_rotation(AxisAngle{axis * (cfg.start_angle * 0.5 * (u(rng) + 1.0))}),
                               Vec3(u(rng), u(rng), u(rng)) * cfg.start_trans};
  const RigidTransform start = compose(goal, perturb);

  const PointCloud placed = transform(tmpl.points, ep.scene_pose);
  for (int j = 0; j < obs_window; ++j) {
    PointCloud c = corrupt(placed, NoiseSpec::for_level(cfg.noise_level, mix(seed, static_cast<std::uint64_t>(j))));
    if (cfg.num_points > 0 && c.size() > cfg.num_points) c = farthest_point_sample(c, cfg.num_points, seed);
    const double s = static_cast<double>(j - (obs_window - 1)) / horizon;
    ep.demo.obs.push_back({io::quantize_f32(c), RobotState::from_pose(reach_pose(start, goal, s), 1.0)});
  }
  for (int k = 1; k <= horizon; ++k) {
    ep.demo.poses.push_back(reach_pose(start, goal, static_cast<double>(k) / horizon));
    ep.demo.grips.push_back(k < horizon ? 1.0 : 0.0);
  }
  return ep;
}

std::vector<EpisodeRecord> generate_dataset(const SceneTemplate& tmpl, int template_id, const DataConfig& cfg,
                                            int count, int obs_window, int horizon, RotMode mode,
                                            std::uint64_t seed) {
  std::vector<EpisodeRecord> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) {
    out.push_back(generate_episode(tmpl, template_id, cfg, obs_window, horizon, mode,
                                   mix(seed, static_cast<std::uint64_t>(i))));
  }
  return out;
}

EpisodeRecord transform_episode(const EpisodeRecord& ep, const RigidTransform& h) {
  EpisodeRecord out = ep;
  for (Observation& o : out.demo.obs) {
    o.cloud = transform(o.cloud, h);
    o.state = RobotState::from_pose(compose(h, o.state.pose()), o.state.grip);
  }
  for (RigidTransform& p : out.demo.poses) p = compose(h, p);
  out.scene_pose = compose(h, ep.scene_pose);
  return out;
}

void write_epr1(std::ostream& out, const EpisodeRecord& ep) {
  io::write_magic(out, "EPR1");
  io::write_le<std::uint64_t>(out, ep.seed);
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ep.template_id));
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ep.demo.obs.size()));
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ep.demo.poses.size()));
  for (const Observation& o : ep.demo.obs) {
    io::write_pcf1(out, o.cloud);
    write_pose(out, o.state.pose());
    io::write_le<double>(out, o.state.grip);
  }
  for (std::size_t k = 0; k < ep.demo.poses.size(); ++k) {
    write_pose(out, ep.demo.poses[k]);
    io::write_le<double>(out, ep.demo.grips[k]);
  }
  write_pose(out, ep.scene_pose);
  if (!out) throw Error(ErrorCode::kIo, "failed to write episode");
}

EpisodeRecord read_epr1(std::istream& in) {
  io::expect_magic(in, "EPR1");
  EpisodeRecord ep;
  ep.seed = io::read_le<std::uint64_t>(in);
  ep.template_id = static_cast<int>(io::read_le<std::uint32_t>(in));
  const auto m = io::read_le<std::uint32_t>(in);
  const auto n = io::read_le<std::uint32_t>(in);
  if (m > 1024 || n > 1024) throw Error(ErrorCode::kFormat, "EPR1 window or horizon implausibly large");
  for (std::uint32_t j = 0; j < m; ++j) {
    PointCloud c = io::read_pcf1(in);
    const RigidTransform pose = read_pose(in);
    const double grip = io::read_le<double>(in);
    ep.demo.obs.push_back({std::move(c), RobotState::from_pose(pose, grip)});
  }
  for (std::uint32_t k = 0; k < n; ++k) {
    ep.demo.poses.push_back(read_pose(in));
    ep.demo.grips.push_back(io::read_le<double>(in));
  }
  ep.scene_pose = read_pose(in);
  return ep;
}

void save_episodes(const std::filesystem::path& dir, std::span<const EpisodeRecord> eps) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < eps.size(); ++i) {
    std::array<char, 48> name;
    std::snprintf(name.data(), name.size(), "episode_%05zu.epr", i);
    const auto path = dir / name.data();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
    write_epr1(out, eps[i]);
  }
}

std::vector<EpisodeRecord> load_episodes(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error(ErrorCode::kIo, "not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".epr") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<EpisodeRecord> out;
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    if (!in) throw Error(ErrorCode::kIo, "cannot open " + f.string());
    out.push_back(read_epr1(in));
  }
  return out;
}

const char* to_string(Condition c) {
  switch (c) {
    case Condition::kSeen: return "seen";
    case Condition::kSeenRd: return "seen+rd";
    case Condition::kNovel: return "novel";
    case Condition::kNovelRd: return "novel+rd";
  }
  return "unknown";
}

const ConditionReport& EvalReport::at(Condition c) const {
  for (const auto& r : conditions) {
    if (r.condition == c) return r;
  }
  throw Error(ErrorCode::kConfig, std::string("report has no condition ") + to_string(c));
}

PolicyFn policy_fn(const Policy& p) {
  return [&p](const EpisodeRecord& ep, std::uint64_t seed) { return policy_rollout(p, ep.demo.obs, seed).final_pose; };
}

PolicyFn oracle_policy() {
  return [](const EpisodeRecord& ep, std::uint64_t) { return ep.demo.poses.back(); };
}

EvalReport evaluate(const PolicyFn& policy, std::span<const EpisodeRecord> seen, std::span<const EpisodeRecord> novel,
                    RotMode mode, const EvalConfig& cfg) {
  EvalReport rep;
  rep.seed = cfg.seed;
  for (const bool is_novel : {false, true}) {
    const auto eps = is_novel ? novel : seen;
    std::vector<RigidTransform> base(eps.size());
    for (const bool rd : {false, true}) {
      ConditionReport r;
      r.condition = is_novel ? (rd ? Condition::kNovelRd : Condition::kNovel)
                             : (rd ? Condition::kSeenRd : Condition::kSeen);
      r.episodes = static_cast<int>(eps.size());
      std::vector<double> terr, aerr, resid;
      int ok = 0;
      for (std::size_t i = 0; i < eps.size(); ++i) {
        const std::uint64_t sample_seed = mix(cfg.seed, i);
        RigidTransform h;
        if (rd) h = random_se3(mix(mix(cfg.seed, is_novel ? 2 : 1), i), mode, cfg.rd_trans);
        const EpisodeRecord ep = rd ? transform_episode(eps[i], h) : eps[i];
        const RigidTransform pred = policy(ep, sample_seed);
        const RigidTransform& truth = ep.demo.poses.back();
        const double te = (pred.trans - truth.trans).norm();
        const double ae = rotation_distance(pred.rot, truth.rot);
        terr.push_back(te);
        aerr.push_back(ae);
        if (te <= cfg.success_trans && ae <= cfg.success_angle) ++ok;
        if (!rd) {
          base[i] = pred;
        } else {
          const RigidTransform moved = compose(h, base[i]);
          resid.push_back(std::max((moved.trans - pred.trans).norm(), rotation_distance(moved.rot, pred.rot)));
        }
      }
      r.success_rate = eps.empty() ? 0.0 : static_cast<double>(ok) / static_cast<double>(eps.size());
      r.mean_trans_error = mean_of(terr);
      r.mean_angle_error = mean_of(aerr);
      r.equivariance_residual = mean_of(resid);
      rep.conditions.push_back(r);
    }
  }
  return rep;
}

void write_report(std::ostream& out, const EvalReport& r) {
  out << "seed = " << r.seed << '\n';
  for (const auto& c : r.conditions) {
    const std::string k = to_string(c.condition);
    out << k << ".episodes = " << c.episodes << '\n';
    out << k << ".success_rate = " << format_double(c.success_rate) << '\n';
    out << k << ".mean_trans_error = " << format_double(c.mean_trans_error) << '\n';
    out << k << ".mean_angle_error = " << format_double(c.mean_angle_error) << '\n';
    out << k << ".equivariance_residual = " << format_double(c.equivariance_residual) << '\n';
  }
}

Eigen::VectorXd invariant_feature(const PointCloud& x, const VNParams& params) {
  const Canonicalization c = estimate_rotation(x, params);
  const Eigen::MatrixXd f = c.frame.rot.matrix().transpose() * c.global.data;
  return f.reshaped();
}

std::vector<DispersionRow> feature_dispersion_study(const VNParams& params, int template_id,
                                                    std::span<const int> levels, const DispersionConfig& cfg) {
  const auto& all = builtin_templates();
  if (template_id < 0 || template_id >= static_cast<int>(all.size())) {
    throw Error(ErrorCode::kConfig, "template id out of range");
  }
  if (cfg.augmentations < 2 || cfg.samples < 1) {
    throw Error(ErrorCode::kConfig, "dispersion needs augmentations >= 2 and samples >= 1");
  }
  const SceneTemplate& tmpl = all[static_cast<std::size_t>(template_id)];
  const Eigen::VectorXd clean = invariant_feature(tmpl.points, params);
  std::vector<double> inter;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (static_cast<int>(i) == template_id || all[i].points.size() <= params.cfg.q) continue;
    inter.push_back((invariant_feature(all[i].points, params) - clean).norm());
  }
  if (inter.empty()) throw Error(ErrorCode::kConfig, "no other template is large enough for the estimator's q");
  const double denom = *std::min_element(inter.begin(), inter.end());

  std::vector<DispersionRow> rows;
  for (const int level : levels) {
    std::vector<double> pair;
    for (int smp = 0; smp < cfg.samples; ++smp) {
      std::vector<Eigen::VectorXd> feats;
      for (int a = 0; a < cfg.augmentations; ++a) {
        const auto ua = static_cast<std::uint64_t>(smp * cfg.augmentations + a);
        const RigidTransform h = random_se3(mix(cfg.seed, ua), params.cfg.mode, cfg.trans_range);
        const PointCloud x = corrupt(transform(tmpl.points, h), NoiseSpec::for_level(level, mix(~cfg.seed, ua)));
        feats.push_back(invariant_feature(x, params));
      }
      for (std::size_t i = 0; i < feats.size(); ++i) {
        for (std::size_t j = i + 1; j < feats.size(); ++j) pair.push_back((feats[i] - feats[j]).norm());
      }
    }
    DispersionRow r;
    r.level = level;
    r.intra = mean_of(pair);
    r.dispersion = r.intra / denom;
    rows.push_back(r);
  }
  return rows;
}

}  // namespace cpol
