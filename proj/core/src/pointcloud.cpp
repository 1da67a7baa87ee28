// Copyright 2026 The canonpolicy Authors
// SPDX-License-Identifier: Apache-2.0

#include "canonpolicy/pointcloud.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace cpol {

PointCloud::PointCloud(PointMatrix points) : points_(std::move(points)) {
  if (!points_.allFinite()) {
    throw Error(ErrorCode::kFormat, "point cloud has non-finite coordinates");
  }
}

Vec3 mean_point(const PointCloud& x) {
  if (x.empty()) throw Error(ErrorCode::kTooFewPoints, "mean of an empty cloud");
  return x.points().colwise().mean().transpose();
}

Decentered decenter(const PointCloud& x) {
  const Vec3 mean = mean_point(x);
  PointMatrix p = x.points().rowwise() - mean.transpose();
  return {PointCloud(std::move(p)), mean};
}

PointCloud transform(const PointCloud& x, const RigidTransform& t) {
  PointMatrix p = (x.points() * t.rot.matrix().transpose()).rowwise() + t.trans.transpose();
  return PointCloud(std::move(p));
}

double max_point_distance(const PointCloud& a, const PointCloud& b) {
  if (a.size() != b.size()) throw Error(ErrorCode::kShapeMismatch, "cloud sizes differ");
  if (a.empty()) return 0.0;
  return (a.points() - b.points()).rowwise().norm().maxCoeff();
}

std::vector<Eigen::Index> farthest_point_indices(const PointCloud& x, Eigen::Index target_n,
                                                 std::uint64_t seed) {
  const Eigen::Index n = x.size();
  if (target_n < 1 || n < target_n) {
    throw Error(ErrorCode::kTooFewPoints, "farthest point sampling needs N >= target_n >= 1");
  }
  std::vector<Eigen::Index> picked;
  picked.reserve(static_cast<std::size_t>(target_n));
  Eigen::VectorXd min_dist = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::infinity());
  Eigen::Index current = static_cast<Eigen::Index>(seed % static_cast<std::uint64_t>(n));
  std::vector<bool> taken(static_cast<std::size_t>(n), false);
  for (Eigen::Index k = 0; k < target_n; ++k) {
    picked.push_back(current);
    taken[static_cast<std::size_t>(current)] = true;
    if (k + 1 == target_n) break;
    const Eigen::RowVector3d c = x.points().row(current);
    Eigen::Index best = -1;
    double best_d = -1.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double d = (x.points().row(i) - c).squaredNorm();
      if (d < min_dist[i]) min_dist[i] = d;
      if (!taken[static_cast<std::size_t>(i)] && min_dist[i] > best_d) {
        best_d = min_dist[i];
        best = i;
      }
    }
    current = best;
  }
  return picked;
}

PointCloud farthest_point_sample(const PointCloud& x, Eigen::Index target_n, std::uint64_t seed) {
  const auto idx = farthest_point_indices(x, target_n, seed);
  PointMatrix out(static_cast<Eigen::Index>(idx.size()), 3);
  for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = x.points().row(idx[k]);
  return PointCloud(std::move(out));
}

KnnGraph knn_graph(const PointCloud& x, int q) {
  const Eigen::Index n = x.size();
  if (q < 1 || n <= q) {
    throw Error(ErrorCode::kTooFewPoints,
                "knn graph needs N > q (N=" + std::to_string(n) + ", q=" + std::to_string(q) + ")");
  }
  KnnGraph g;
  g.q = q;
  g.neighbor_idx.resize(n, q);
  std::vector<std::pair<double, int>> cand(static_cast<std::size_t>(n - 1));
  for (Eigen::Index i = 0; i < n; ++i) {
    std::size_t c = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      cand[c++] = {(x.points().row(j) - x.points().row(i)).squaredNorm(), static_cast<int>(j)};
    }
    std::partial_sort(cand.begin(), cand.begin() + q, cand.end());
    for (int k = 0; k < q; ++k) g.neighbor_idx(i, k) = cand[static_cast<std::size_t>(k)].second;
  }
  return g;
}

NoiseSpec NoiseSpec::for_level(int level, std::uint64_t seed) {
  switch (level) {
    case 0: return {0, 0.0, 0.0, seed};
    case 1: return {1, 0.05, 0.05, seed};
    case 2: return {2, 0.1, 0.10, seed};
    case 3: return {3, 0.2, 0.20, seed};
    default: throw Error(ErrorCode::kConfig, "noise level must be in 0..3");
  }
}

PointCloud corrupt(const PointCloud& x, const NoiseSpec& spec) {
  if (spec.level == 0) return x;
  std::mt19937_64 rng(spec.seed);
  const Eigen::Index n = x.size();
  const auto group = static_cast<Eigen::Index>(std::floor(spec.frac * static_cast<double>(n)));

  std::vector<Eigen::RowVector3d> pts;
  pts.reserve(static_cast<std::size_t>(n));
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::RowVector3d p = x.points().row(i);
    if (spec.sigma > 0.0) {
      for (int a = 0; a < 3; ++a) p[a] += spec.sigma * gauss(rng);
    }
    pts.push_back(p);
  }

  // Dropout: remove `group` uniformly chosen points.
  for (Eigen::Index k = 0; k < group && pts.size() > 1; ++k) {
    std::uniform_int_distribution<std::size_t> pick(0, pts.size() - 1);
    pts.erase(pts.begin() + static_cast<std::ptrdiff_t>(pick(rng)));
  }

  // Crop: remove the `group` points nearest a random anchor.
  if (group > 0 && pts.size() > static_cast<std::size_t>(group)) {
    std::uniform_int_distribution<std::size_t> pick(0, pts.size() - 1);
    const Eigen::RowVector3d anchor = pts[pick(rng)];
    std::vector<std::pair<double, std::size_t>> d(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) d[i] = {(pts[i] - anchor).squaredNorm(), i};
    std::partial_sort(d.begin(), d.begin() + group, d.end());
    std::vector<bool> drop(pts.size(), false);
    for (Eigen::Index k = 0; k < group; ++k) drop[d[static_cast<std::size_t>(k)].second] = true;
    std::vector<Eigen::RowVector3d> kept;
    kept.reserve(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (!drop[i]) kept.push_back(pts[i]);
    }
    pts.swap(kept);
  }

  // Insert: `group` uniform points inside the current bounding box.
  if (group > 0) {
    Eigen::RowVector3d lo = pts.front(), hi = pts.front();
    for (const auto& p : pts) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (Eigen::Index k = 0; k < group; ++k) {
      Eigen::RowVector3d p;
      for (int a = 0; a < 3; ++a) p[a] = lo[a] + unit(rng) * (hi[a] - lo[a]);
      pts.push_back(p);
    }
  }

  PointMatrix out(static_cast<Eigen::Index>(pts.size()), 3);
  for (std::size_t i = 0; i < pts.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = pts[i];
  return PointCloud(std::move(out));
}

const char* to_string(RotMode mode) { return mode == RotMode::kSO3 ? "so3" : "so2"; }

RotMode rot_mode_from_string(const std::string& s) {
  if (s == "so3") return RotMode::kSO3;
  if (s == "so2") return RotMode::kSO2;
  throw Error(ErrorCode::kConfig, "mode must be so3 or so2, got '" + s + "'");
}

Rotation random_rotation(std::mt19937_64& rng) {
  // Shoemake's uniform quaternion.
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u1 = unit(rng), u2 = unit(rng), u3 = unit(rng);
  const double a = std::sqrt(1.0 - u1), b = std::sqrt(u1);
  const double t2 = 2.0 * std::numbers::pi * u2, t3 = 2.0 * std::numbers::pi * u3;
  const Quaternion q{b * std::cos(t3), a * std::sin(t2), a * std::cos(t2), b * std::sin(t3)};
  return quat_to_rotation(q);
}

RigidTransform random_se3(std::mt19937_64& rng, RotMode mode, double trans_scale) {
  RigidTransform t;
  std::uniform_real_distribution<double> sym(-1.0, 1.0);
  if (mode == RotMode::kSO3) {
    t.rot = random_rotation(rng);
    for (int a = 0; a < 3; ++a) t.trans[a] = trans_scale * sym(rng);
  } else {
    std::uniform_real_distribution<double> yaw(-std::numbers::pi, std::numbers::pi);
    t.rot = Rotation::about_z(yaw(rng));
    t.trans = Vec3(trans_scale * sym(rng), trans_scale * sym(rng), 0.0);
  }
  return t;
}

RigidTransform random_se3(std::uint64_t seed, RotMode mode, double trans_scale) {
  std::mt19937_64 rng(seed);
  return random_se3(rng, mode, trans_scale);
}

}  // namespace cpol
