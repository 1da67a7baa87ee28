// Copyright 2026 The canonpolicy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>

#include "canonpolicy/autodiff.hpp"
#include "canonpolicy/geom.hpp"
#include "canonpolicy/pointcloud.hpp"

// Vector-Neuron rotation estimator: a network whose features are stacks of
// 3D vectors, two equivariant output vectors, Gram-Schmidt into a frame, and
// optional reduction of that frame to a rotation about z.
namespace cpol {

/// Stack of C vector channels for each of P points, stored as a (3P) x C
/// matrix where row 3p + a holds coordinate a of point p.
struct VNFeature {
  ad::Matrix data;

  Eigen::Index points() const { return data.rows() / 3; }
  Eigen::Index channels() const { return data.cols(); }
  Vec3 vec(Eigen::Index p, Eigen::Index c) const { return data.block<3, 1>(3 * p, c); }
};

/// Applies r to every 3-vector channel.
VNFeature rotate(const VNFeature& f, const Rotation& r);
/// max |a - b| / max(1, max |b|) over all entries.
double relative_error(const VNFeature& a, const VNFeature& b);

struct VNConfig {
  int repeat_layers = 4;
  int feat_dim = 48;
  int q = 10;
  RotMode mode = RotMode::kSO3;

  void validate() const;
  bool operator==(const VNConfig&) const = default;
};

/// Weights of the estimator. Tensor layout: for each layer l a linear map
/// (3 x F for l = 0, F x F after) followed by an F x F direction map, then
/// the F x 2 output map.
struct VNParams {
  VNConfig cfg;
  ad::ParamSet weights;

  static VNParams init(const VNConfig& cfg, std::uint64_t seed);
  static std::size_t param_count(const VNConfig& cfg);

  std::size_t linear(int layer) const { return static_cast<std::size_t>(2 * layer); }
  std::size_t direction(int layer) const { return static_cast<std::size_t>(2 * layer + 1); }
  std::size_t head() const { return static_cast<std::size_t>(2 * cfg.repeat_layers); }
};

/// Per point i: (p_i, mean_j (p_j - p_i), mean_j unit(p_j - p_i)) over its
/// neighbors, so C = 3. Zero offsets give a zero direction.
VNFeature edge_features(const PointCloud& x_de, const KnnGraph& g);
/// Channel mixing: out_j = sum_i f_i W(i, j). Spatial coordinates never mix.
VNFeature vn_linear(const VNFeature& f, const ad::Matrix& w);
/// Keeps v where <v, d> >= 0, otherwise removes its component along d,
/// with d = vn_linear(f, u) per channel.
VNFeature vn_activation(const VNFeature& f, const ad::Matrix& u);
/// Mean over points. Blocks are summed in lexicographic order of their
/// entries so any permutation of the input gives the same bits.
VNFeature vn_mean_pool(const VNFeature& f);

struct PhiOutput {
  Vec3 r1 = Vec3::Zero();
  Vec3 r2 = Vec3::Zero();
  VNFeature global;  // pooled feature, 3 x feat_dim
};

PhiOutput forward_phi(const PointCloud& x_de, const VNParams& params);

/// Columns [u1, u2, u1 x u2]. Throws kDegenerateFrame when either
/// normalization falls below 1e-7.
Rotation schmidt(const Vec3& r1, const Vec3& r2);
/// atan2 of the first column's (y, x). Throws kGimbalDegenerate near +-z.
double extract_so2(const Rotation& r);

struct Canonicalization {
  RigidTransform frame;  // (estimated rotation, cloud mean)
  PointCloud x_cn;
  bool degenerate = false;
  VNFeature global;
};

/// Decenter, estimate the frame and express the cloud in it. A degenerate
/// frame falls back to (I, mean) with `degenerate` set.
Canonicalization estimate_rotation(const PointCloud& x, const VNParams& params);

namespace vn {

// Differentiable building blocks used by training.

/// Rectification with per-channel directions `d` (same shape as `f`).
ad::Var activation(ad::Tape& t, ad::Var f, ad::Var d);
ad::Var mean_pool(ad::Tape& t, ad::Var f);
/// 3 x 2 input (r1, r2) to a 3 x 3 rotation.
ad::Var schmidt(ad::Tape& t, ad::Var r);
/// Rotation about z by the atan2 angle of the input's first column.
ad::Var planar(ad::Tape& t, ad::Var rot);

struct Graph {
  ad::Var global;    // 3 x F pooled feature
  ad::Var r;         // 3 x 2 output vectors
  ad::Var rotation;  // 3 x 3 estimated frame rotation
  ad::Var x_cn;      // N x 3 canonical points (rows)
  Vec3 mean = Vec3::Zero();
  bool degenerate = false;
};

/// Full canonicalization on the tape. KNN indices are computed from values
/// and carry no gradient.
Graph canonicalize(ad::Tape& t, const PointCloud& x, const VNParams& params, ad::ParamSet* grads);

/// The pooled feature and output vectors only, for an already decentered cloud.
Graph phi(ad::Tape& t, const PointCloud& x_de, const VNParams& params, ad::ParamSet* grads);

}  // namespace vn

// "VNP1" block: magic, uint32 mode, repeat_layers, feat_dim, q, then the flat
// float64 parameter vector, all little-endian.
void write_vnp1(std::ostream& out, const VNParams& params);
VNParams read_vnp1(std::istream& in);

}  // namespace cpol
