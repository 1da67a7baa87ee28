// Copyright 2026 The canonpolicy Authors
// SPDX-License-Identifier: Apache-2.0

#include "canonpolicy/encoder.hpp"

#include <array>
#include <cmath>
#include <istream>
#include <ostream>
#include <random>

#include "canonpolicy/binary_io.hpp"

namespace cpol {

namespace {

constexpr double kSigmaEps = 1e-8;

using ad::Matrix;
using ad::Tape;
using ad::Var;

struct AffineStats {
  Eigen::RowVector3d mu;
  double s = 0.0;  // raw std before the epsilon
};

// Neighborhood of point i as a q x 3 block.
Eigen::Matrix<double, Eigen::Dynamic, 3> gather(const Matrix& pts, const KnnGraph& g, Eigen::Index i) {
  Eigen::Matrix<double, Eigen::Dynamic, 3> f(g.q, 3);
  for (int k = 0; k < g.q; ++k) f.row(k) = pts.row(g(i, k));
  return f;
}

Matrix affine_forward(const Matrix& pts, const KnnGraph& g, const Eigen::RowVector3d& alpha,
                      const Eigen::RowVector3d& beta, std::vector<AffineStats>* stats) {
  const Eigen::Index n = pts.rows();
  if (g.size() != n) throw Error(ErrorCode::kShapeMismatch, "graph and cloud sizes differ");
  Matrix out(n, 3 * g.q);
  if (stats) stats->resize(static_cast<std::size_t>(n));
  const double count = 3.0 * g.q;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto f = gather(pts, g, i);
    const Eigen::RowVector3d mu = f.colwise().mean();
    const auto c = (f.rowwise() - mu).eval();
    const double s = std::sqrt(c.squaredNorm() / count);
    const double sigma = s + kSigmaEps;
    for (int k = 0; k < g.q; ++k) {
      out.block<1, 3>(i, 3 * k) = alpha.cwiseProduct(c.row(k) / sigma) + beta;
    }
    if (stats) (*stats)[static_cast<std::size_t>(i)] = {mu, s};
  }
  return out;
}

Var linear(Tape& t, Var x, const ad::ParamSet& ps, std::size_t w, ad::ParamSet* grads) {
  return ad::add_row(t, ad::matmul(t, x, t.param(ps, w, grads)), t.param(ps, w + 1, grads));
}

}  // namespace

void EncoderConfig::validate() const {
  if (q < 1) throw Error(ErrorCode::kConfig, "encoder.q must be >= 1");
  if (widths.empty()) throw Error(ErrorCode::kConfig, "encoder.widths must be nonempty");
  for (int w : widths) {
    if (w < 1) throw Error(ErrorCode::kConfig, "encoder.widths entries must be >= 1");
  }
  if (out_dim < 1) throw Error(ErrorCode::kConfig, "encoder.out_dim must be >= 1");
}

EncoderParams EncoderParams::init(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  EncoderParams p;
  p.cfg = cfg;
  auto& w = p.weights;
  w.add("enc.alpha", 1, 3);
  w.add("enc.beta", 1, 3);
  int in = cfg.input_dim();
  for (std::size_t s = 0; s < cfg.widths.size(); ++s) {
    const int width = cfg.widths[s];
    const std::string tag = "enc.s" + std::to_string(s);
    w.add(tag + ".proj.w", in, width);
    w.add(tag + ".proj.b", 1, width);
    w.add(tag + ".res1.w", width, width);
    w.add(tag + ".res1.b", 1, width);
    w.add(tag + ".res2.w", width, width);
    w.add(tag + ".res2.b", 1, width);
    in = width;
  }
  w.add("enc.out.w", in, cfg.out_dim);
  w.add("enc.out.b", 1, cfg.out_dim);

  std::mt19937_64 rng(seed);
  w[kAlpha].setOnes();
  for (std::size_t i = 2; i < w.size(); ++i) {
    if (w[i].rows() == 1) continue;  // biases start at zero
    const double s = 1.0 / std::sqrt(static_cast<double>(w[i].rows()));
    std::uniform_real_distribution<double> u(-s, s);
    for (Eigen::Index k = 0; k < w[i].size(); ++k) w[i].data()[k] = u(rng);
  }
  return p;
}

ad::Matrix geometric_affine(const PointCloud& x_cn, const KnnGraph& g, const Eigen::RowVector3d& alpha,
                            const Eigen::RowVector3d& beta) {
  return affine_forward(x_cn.points(), g, alpha, beta, nullptr);
}

SceneFeature encode(const PointCloud& x_cn, const EncoderParams& params) {
  Tape t;
  const Var out = enc::encode(t, t.constant(x_cn.points()), params, nullptr);
  return {t.value(out).row(0)};
}

double max_block_gain(const PointCloud& x_cn, const EncoderParams& params) {
  Tape t;
  const auto& ps = params.weights;
  const Var pts = t.constant(x_cn.points());
  const KnnGraph g = knn_graph(x_cn, params.cfg.q);
  const Var ag = enc::geometric_affine(t, pts, g, t.param(ps, EncoderParams::kAlpha, nullptr),
                                       t.param(ps, EncoderParams::kBeta, nullptr));
  const std::array<Var, 2> parts{ag, pts};
  Var h = ad::concat_cols(t, parts);
  double gain = 0.0;
  for (int s = 0; s < static_cast<int>(params.cfg.widths.size()); ++s) {
    const std::size_t base = params.stage(s);
    h = linear(t, h, ps, base, nullptr);
    const Var r = linear(t, ad::silu(t, linear(t, h, ps, base + 2, nullptr)), ps, base + 4, nullptr);
    const Var next = ad::add(t, h, r);
    const double in_norm = t.value(h).norm();
    if (in_norm > 0.0) gain = std::max(gain, t.value(next).norm() / in_norm);
    h = next;
  }
  return gain;
}

namespace enc {

Var geometric_affine(Tape& t, Var points, const KnnGraph& g, Var alpha, Var beta) {
  const Eigen::RowVector3d a = t.value(alpha).row(0);
  const Eigen::RowVector3d b = t.value(beta).row(0);
  std::vector<AffineStats> stats;
  Matrix out = affine_forward(t.value(points), g, a, b, &stats);
  return t.record(std::move(out), {points, alpha, beta},
                  [points, alpha, beta, g, stats = std::move(stats)](Tape& tp, int self) {
    const Matrix& go = tp.out_grad(self);
    const Matrix& pts = tp.value(points);
    const Eigen::RowVector3d a2 = tp.value(alpha).row(0);
    const double count = 3.0 * g.q;
    Matrix gp = Matrix::Zero(pts.rows(), 3);
    Eigen::RowVector3d galpha = Eigen::RowVector3d::Zero();
    Eigen::RowVector3d gbeta = Eigen::RowVector3d::Zero();
    Eigen::Matrix<double, Eigen::Dynamic, 3> gz(g.q, 3), c(g.q, 3);
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
      const auto& st = stats[static_cast<std::size_t>(i)];
      const double sigma = st.s + kSigmaEps;
      c = gather(pts, g, i).rowwise() - st.mu;
      for (int k = 0; k < g.q; ++k) {
        const Eigen::RowVector3d gk = go.block<1, 3>(i, 3 * k);
        galpha += gk.cwiseProduct(c.row(k) / sigma);
        gbeta += gk;
        gz.row(k) = gk.cwiseProduct(a2);
      }
      // z = c / (s + eps), s = sqrt(mean(c^2)).
      Eigen::Matrix<double, Eigen::Dynamic, 3> gc = gz / sigma;
      if (st.s > 0.0) {
        const double dot = gz.cwiseProduct(c).sum();
        gc -= (dot / (sigma * sigma * count * st.s)) * c;
      }
      // c = f - mean(f) per channel.
      const Eigen::RowVector3d gmean = gc.colwise().mean();
      for (int k = 0; k < g.q; ++k) gp.row(g(i, k)) += gc.row(k) - gmean;
    }
    tp.accumulate(points, gp);
    tp.accumulate(alpha, galpha);
    tp.accumulate(beta, gbeta);
  });
}

Var encode(Tape& t, Var points, const EncoderParams& params, ad::ParamSet* grads) {
  const auto& ps = params.weights;
  const KnnGraph g = knn_graph(PointCloud(PointMatrix(t.value(points))), params.cfg.q);
  const Var ag = geometric_affine(t, points, g, t.param(ps, EncoderParams::kAlpha, grads),
                                  t.param(ps, EncoderParams::kBeta, grads));
  const std::array<Var, 2> parts{ag, points};
  Var h = ad::concat_cols(t, parts);
  for (int s = 0; s < static_cast<int>(params.cfg.widths.size()); ++s) {
    const std::size_t base = params.stage(s);
    h = linear(t, h, ps, base, grads);
    const Var r = linear(t, ad::silu(t, linear(t, h, ps, base + 2, grads)), ps, base + 4, grads);
    h = ad::add(t, h, r);
  }
  return linear(t, ad::max_rows(t, h), ps, params.output(), grads);
}

}  // namespace enc

void write_enc1(std::ostream& out, const EncoderParams& params) {
  io::write_magic(out, "ENC1");
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.cfg.q));
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.cfg.widths.size()));
  for (int w : params.cfg.widths) io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(w));
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.cfg.out_dim));
  const Eigen::VectorXd flat = params.weights.flat();
  for (Eigen::Index i = 0; i < flat.size(); ++i) io::write_le<double>(out, flat[i]);
}

EncoderParams read_enc1(std::istream& in) {
  io::expect_magic(in, "ENC1");
  EncoderConfig cfg;
  cfg.q = static_cast<int>(io::read_le<std::uint32_t>(in));
  const auto stages = io::read_le<std::uint32_t>(in);
  if (stages == 0 || stages > 64) throw Error(ErrorCode::kFormat, "ENC1 stage count out of range");
  cfg.widths.resize(stages);
  for (auto& w : cfg.widths) w = static_cast<int>(io::read_le<std::uint32_t>(in));
  cfg.out_dim = static_cast<int>(io::read_le<std::uint32_t>(in));
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::kFormat, std::string("ENC1 header: ") + e.what());
  }
  EncoderParams p = EncoderParams::init(cfg, 0);
  Eigen::VectorXd flat(static_cast<Eigen::Index>(p.weights.num_scalars()));
  for (Eigen::Index i = 0; i < flat.size(); ++i) flat[i] = io::read_le<double>(in);
  p.weights.set_flat(flat);
  return p;
}

}  // namespace cpol
