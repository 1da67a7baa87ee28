// Copyright 2026 The canonpolicy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "canonpolicy/autodiff.hpp"
#include "canonpolicy/pointcloud.hpp"

// Point-cloud aggregation encoder: geometric affine normalization of each
// point's neighborhood, a shared per-point residual MLP, max pooling.
namespace cpol {

struct EncoderConfig {
  int q = 10;
  std::vector<int> widths = {64, 128, 256};
  int out_dim = 128;

  void validate() const;
  /// Per-point input width: q normalized neighbors plus the point itself.
  int input_dim() const { return 3 * q + 3; }
  bool operator==(const EncoderConfig&) const = default;
};

/// Tensor layout: alpha (1x3), beta (1x3); per stage s a projection
/// (W, b) then a residual block (W1, b1, W2, b2); the output map (W, b).
struct EncoderParams {
  EncoderConfig cfg;
  ad::ParamSet weights;

  static EncoderParams init(const EncoderConfig& cfg, std::uint64_t seed);

  static constexpr std::size_t kAlpha = 0;
  static constexpr std::size_t kBeta = 1;
  std::size_t stage(int s) const { return 2 + 6 * static_cast<std::size_t>(s); }
  std::size_t output() const { return stage(static_cast<int>(cfg.widths.size())); }
};

struct SceneFeature {
  Eigen::RowVectorXd vec;
};

/// F_ag for every point: row i holds its q neighbors as alpha * (F - mu) /
/// (sigma + 1e-8) + beta, with mu the per-channel neighborhood mean and sigma
/// one scalar std over all 3q entries. Output is N x 3q.
ad::Matrix geometric_affine(const PointCloud& x_cn, const KnnGraph& g, const Eigen::RowVector3d& alpha,
                            const Eigen::RowVector3d& beta);

SceneFeature encode(const PointCloud& x_cn, const EncoderParams& params);

/// Largest ratio ||block(h)|| / ||h|| over the residual blocks for one input,
/// used to watch for activation blowups.
double max_block_gain(const PointCloud& x_cn, const EncoderParams& params);

namespace enc {

ad::Var geometric_affine(ad::Tape& t, ad::Var points, const KnnGraph& g, ad::Var alpha, ad::Var beta);
/// `points` is an N x 3 node; the KNN graph is built from its value.
ad::Var encode(ad::Tape& t, ad::Var points, const EncoderParams& params, ad::ParamSet* grads);

}  // namespace enc

// "ENC1" block: magic, uint32 q, uint32 stage count, uint32 widths...,
// uint32 out_dim, then the flat float64 parameter vector, little-endian.
void write_enc1(std::ostream& out, const EncoderParams& params);
EncoderParams read_enc1(std::istream& in);

}  // namespace cpol
