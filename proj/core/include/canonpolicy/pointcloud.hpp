// Copyright 2026 The canonpolicy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "canonpolicy/geom.hpp"

namespace cpol {

/// N x 3, one point per row.
using PointMatrix = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

/// Ordered set of N >= 1 finite 3D points.
class PointCloud {
 public:
  PointCloud() = default;
  explicit PointCloud(PointMatrix points);

  Eigen::Index size() const { return points_.rows(); }
  bool empty() const { return points_.rows() == 0; }
  const PointMatrix& points() const { return points_; }
  Vec3 point(Eigen::Index i) const { return points_.row(i).transpose(); }

  bool operator==(const PointCloud& o) const { return points_ == o.points_; }

 private:
  PointMatrix points_;
};

struct Decentered {
  PointCloud cloud;
  Vec3 mean = Vec3::Zero();
};

Vec3 mean_point(const PointCloud& x);
Decentered decenter(const PointCloud& x);
PointCloud transform(const PointCloud& x, const RigidTransform& t);
/// Max per-point Euclidean distance between equally sized clouds.
double max_point_distance(const PointCloud& a, const PointCloud& b);

/// Greedy farthest point sampling. The first pick is `seed % N`; each further
/// pick maximizes the distance to the selected set, ties to the lowest index.
PointCloud farthest_point_sample(const PointCloud& x, Eigen::Index target_n, std::uint64_t seed);
std::vector<Eigen::Index> farthest_point_indices(const PointCloud& x, Eigen::Index target_n,
                                                 std::uint64_t seed);

/// Exact q-nearest-neighbor table, self excluded, rows sorted by (distance, index).
struct KnnGraph {
  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> neighbor_idx;
  int q = 0;

  Eigen::Index size() const { return neighbor_idx.rows(); }
  int operator()(Eigen::Index i, int k) const { return neighbor_idx(i, k); }
};

KnnGraph knn_graph(const PointCloud& x, int q);

/// Corruption recipe for the noise-robustness protocol.
struct NoiseSpec {
  int level = 0;
  double sigma = 0.0;
  double frac = 0.0;
  std::uint64_t seed = 0;

  /// Level 0..3 presets: (0, 0), (0.05, 5%), (0.1, 10%), (0.2, 20%).
  static NoiseSpec for_level(int level, std::uint64_t seed);
};

/// Jitter every point, then drop, crop around a random anchor and insert
/// floor(frac * N) points each. Level 0 returns the input unchanged.
PointCloud corrupt(const PointCloud& x, const NoiseSpec& spec);

enum class RotMode { kSO3, kSO2 };

const char* to_string(RotMode mode);
RotMode rot_mode_from_string(const std::string& s);

/// Uniform rotation (so3) or uniform yaw (so2, z-translation zero) with
/// translation uniform in [-trans_scale, trans_scale]^3.
RigidTransform random_se3(std::mt19937_64& rng, RotMode mode, double trans_scale);
RigidTransform random_se3(std::uint64_t seed, RotMode mode, double trans_scale);
Rotation random_rotation(std::mt19937_64& rng);

}  // namespace cpol
