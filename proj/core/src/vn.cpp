// Copyright 2026 The canonpolicy Authors
// SPDX-License-Identifier: Apache-2.0

#include "canonpolicy/vn.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>

#include "canonpolicy/binary_io.hpp"

namespace cpol {

namespace {

constexpr double kDirEps = 1e-8;
constexpr double kFrameEps = 1e-7;
constexpr double kGimbalEps2 = 1e-14;

using ad::Matrix;
using ad::Tape;
using ad::Var;

Matrix activation_forward(const Matrix& f, const Matrix& d) {
  Matrix out = f;
  const Eigen::Index pts = f.rows() / 3;
  for (Eigen::Index p = 0; p < pts; ++p) {
    for (Eigen::Index c = 0; c < f.cols(); ++c) {
      const Vec3 v = f.block<3, 1>(3 * p, c);
      const Vec3 dv = d.block<3, 1>(3 * p, c);
      if (v.dot(dv) >= 0.0) continue;
      const Vec3 dh = dv / std::max(dv.norm(), kDirEps);
      out.block<3, 1>(3 * p, c) = v - v.dot(dh) * dh;
    }
  }
  return out;
}

std::vector<Eigen::Index> pool_order(const Matrix& f) {
  const Eigen::Index pts = f.rows() / 3;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(pts));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index c = 0; c < f.cols(); ++c) {
      for (int r = 0; r < 3; ++r) {
        const double x = f(3 * a + r, c), y = f(3 * b + r, c);
        if (x != y) return x < y;
      }
    }
    return a < b;
  });
  return order;
}

Matrix mean_pool_forward(const Matrix& f) {
  const Eigen::Index pts = f.rows() / 3;
  if (pts < 1) throw Error(ErrorCode::kTooFewPoints, "mean pool over zero points");
  Matrix acc = Matrix::Zero(3, f.cols());
  for (const Eigen::Index p : pool_order(f)) acc += f.middleRows(3 * p, 3);
  return acc / static_cast<double>(pts);
}

void check_frame(const Vec3& r1, const Vec3& r2) {
  const double n1 = r1.norm();
  if (!(n1 > kFrameEps)) throw Error(ErrorCode::kDegenerateFrame, "first equivariant vector vanishes");
  const Vec3 u1 = r1 / n1;
  if (!((r2 - u1.dot(r2) * u1).norm() > kFrameEps)) {
    throw Error(ErrorCode::kDegenerateFrame, "equivariant vectors are collinear");
  }
}

bool frame_ok(const Vec3& r1, const Vec3& r2) {
  const double n1 = r1.norm();
  if (!(n1 > kFrameEps)) return false;
  const Vec3 u1 = r1 / n1;
  return (r2 - u1.dot(r2) * u1).norm() > kFrameEps;
}

Mat3 schmidt_matrix(const Vec3& r1, const Vec3& r2) {
  const Vec3 u1 = r1 / r1.norm();
  const Vec3 w = r2 - u1.dot(r2) * u1;
  const Vec3 u2 = w / w.norm();
  Mat3 m;
  m.col(0) = u1;
  m.col(1) = u2;
  m.col(2) = u1.cross(u2);
  return m;
}

}  // namespace

VNFeature rotate(const VNFeature& f, const Rotation& r) {
  VNFeature out{Matrix(f.data.rows(), f.data.cols())};
  for (Eigen::Index p = 0; p < f.points(); ++p) {
    out.data.middleRows(3 * p, 3).noalias() = r.matrix() * f.data.middleRows(3 * p, 3);
  }
  return out;
}

double relative_error(const VNFeature& a, const VNFeature& b) {
  if (a.data.rows() != b.data.rows() || a.data.cols() != b.data.cols()) {
    throw Error(ErrorCode::kShapeMismatch, "feature shapes differ");
  }
  const double scale = std::max(1.0, b.data.cwiseAbs().maxCoeff());
  return (a.data - b.data).cwiseAbs().maxCoeff() / scale;
}

void VNConfig::validate() const {
  if (repeat_layers < 1) throw Error(ErrorCode::kConfig, "vn.repeat_layers must be >= 1");
  if (feat_dim < 2) throw Error(ErrorCode::kConfig, "vn.feat_dim must be >= 2");
  if (q < 1) throw Error(ErrorCode::kConfig, "vn.q must be >= 1");
}

VNParams VNParams::init(const VNConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  VNParams p;
  p.cfg = cfg;
  const int fd = cfg.feat_dim;
  for (int l = 0; l < cfg.repeat_layers; ++l) {
    p.weights.add("vn.lin" + std::to_string(l), l == 0 ? 3 : fd, fd);
    p.weights.add("vn.dir" + std::to_string(l), fd, fd);
  }
  p.weights.add("vn.head", fd, 2);
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < p.weights.size(); ++i) {
    Matrix& w = p.weights[i];
    const double s = 1.0 / std::sqrt(static_cast<double>(w.rows()));
    std::uniform_real_distribution<double> u(-s, s);
    for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = u(rng);
  }
  return p;
}

std::size_t VNParams::param_count(const VNConfig& cfg) {
  const auto fd = static_cast<std::size_t>(cfg.feat_dim);
  const auto layers = static_cast<std::size_t>(cfg.repeat_layers);
  return 3 * fd + fd * fd + (layers - 1) * 2 * fd * fd + 2 * fd;
}

VNFeature edge_features(const PointCloud& x_de, const KnnGraph& g) {
  const Eigen::Index n = x_de.size();
  if (g.size() != n) throw Error(ErrorCode::kShapeMismatch, "graph and cloud sizes differ");
  VNFeature f{Matrix::Zero(3 * n, 3)};
  const double inv_q = 1.0 / static_cast<double>(g.q);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec3 pi = x_de.point(i);
    Vec3 off = Vec3::Zero(), dir = Vec3::Zero();
    for (int k = 0; k < g.q; ++k) {
      const Vec3 e = x_de.point(g(i, k)) - pi;
      off += e;
      dir += e / std::max(e.norm(), kDirEps);
    }
    f.data.block<3, 1>(3 * i, 0) = pi;
    f.data.block<3, 1>(3 * i, 1) = off * inv_q;
    f.data.block<3, 1>(3 * i, 2) = dir * inv_q;
  }
  return f;
}

VNFeature vn_linear(const VNFeature& f, const ad::Matrix& w) {
  if (f.channels() != w.rows()) throw Error(ErrorCode::kShapeMismatch, "vn_linear channel mismatch");
  return {f.data * w};
}

VNFeature vn_activation(const VNFeature& f, const ad::Matrix& u) {
  if (f.channels() != u.rows() || u.rows() != u.cols()) {
    throw Error(ErrorCode::kShapeMismatch, "vn_activation direction map must be C x C");
  }
  return {activation_forward(f.data, f.data * u)};
}

VNFeature vn_mean_pool(const VNFeature& f) { return {mean_pool_forward(f.data)}; }

PhiOutput forward_phi(const PointCloud& x_de, const VNParams& params) {
  Tape t;
  const vn::Graph g = vn::phi(t, x_de, params, nullptr);
  PhiOutput out;
  out.global.data = t.value(g.global);
  out.r1 = t.value(g.r).col(0);
  out.r2 = t.value(g.r).col(1);
  return out;
}

Rotation schmidt(const Vec3& r1, const Vec3& r2) {
  check_frame(r1, r2);
  return Rotation::unchecked(schmidt_matrix(r1, r2));
}

double extract_so2(const Rotation& r) {
  const double x1 = r.matrix()(0, 0), y1 = r.matrix()(1, 0);
  if (!(x1 * x1 + y1 * y1 > kGimbalEps2)) {
    throw Error(ErrorCode::kGimbalDegenerate, "first frame axis is aligned with z");
  }
  return std::atan2(y1, x1);
}

Canonicalization estimate_rotation(const PointCloud& x, const VNParams& params) {
  Tape t;
  const vn::Graph g = vn::canonicalize(t, x, params, nullptr);
  Canonicalization c;
  c.frame.rot = Rotation::unchecked(t.value(g.rotation));
  c.frame.trans = g.mean;
  c.x_cn = PointCloud(PointMatrix(t.value(g.x_cn)));
  c.degenerate = g.degenerate;
  c.global.data = t.value(g.global);
  return c;
}

namespace vn {

Var activation(Tape& t, Var f, Var d) {
  const Matrix& fv = t.value(f);
  const Matrix& dv = t.value(d);
  if (fv.rows() != dv.rows() || fv.cols() != dv.cols() || fv.rows() % 3 != 0) {
    throw Error(ErrorCode::kShapeMismatch, "vn activation shape mismatch");
  }
  return t.record(activation_forward(fv, dv), {f, d}, [f, d](Tape& tp, int self) {
    const Matrix& g = tp.out_grad(self);
    const Matrix& fv2 = tp.value(f);
    const Matrix& dv2 = tp.value(d);
    Matrix gf = g;
    Matrix gd = Matrix::Zero(g.rows(), g.cols());
    const Eigen::Index pts = fv2.rows() / 3;
    for (Eigen::Index p = 0; p < pts; ++p) {
      for (Eigen::Index c = 0; c < fv2.cols(); ++c) {
        const Vec3 v = fv2.block<3, 1>(3 * p, c);
        const Vec3 dd = dv2.block<3, 1>(3 * p, c);
        const double s = v.dot(dd);
        if (s >= 0.0) continue;
        const Vec3 go = g.block<3, 1>(3 * p, c);
        const double nrm = dd.norm();
        const bool guarded = nrm <= kDirEps;
        const double w = guarded ? 1.0 / (kDirEps * kDirEps) : 1.0 / (nrm * nrm);
        const double dg = dd.dot(go);
        // out = v - s w d
        gf.block<3, 1>(3 * p, c) = go - w * dg * dd;
        Vec3 gdd = -w * dg * v - s * w * go;
        if (!guarded) gdd += 2.0 * s * w * w * dg * dd;
        gd.block<3, 1>(3 * p, c) = gdd;
      }
    }
    tp.accumulate(f, gf);
    tp.accumulate(d, gd);
  });
}

Var mean_pool(Tape& t, Var f) {
  const Matrix& fv = t.value(f);
  const Eigen::Index pts = fv.rows() / 3;
  return t.record(mean_pool_forward(fv), {f}, [f, pts](Tape& tp, int self) {
    const Matrix g = tp.out_grad(self) / static_cast<double>(pts);
    tp.accumulate_with(f, [&](Matrix& gf) {
      for (Eigen::Index p = 0; p < pts; ++p) gf.middleRows(3 * p, 3) += g;
    });
  });
}

Var schmidt(Tape& t, Var r) {
  const Matrix& rv = t.value(r);
  if (rv.rows() != 3 || rv.cols() != 2) throw Error(ErrorCode::kShapeMismatch, "schmidt expects 3 x 2");
  const Vec3 r1 = rv.col(0), r2 = rv.col(1);
  check_frame(r1, r2);
  Matrix out = schmidt_matrix(r1, r2);
  return t.record(out, {r}, [r, out](Tape& tp, int self) {
    const Matrix& g = tp.out_grad(self);
    const Vec3 a1 = tp.value(r).col(0), a2 = tp.value(r).col(1);
    const Vec3 u1 = out.col(0), u2 = out.col(1);
    const Vec3 g1 = g.col(0), g2 = g.col(1), g3 = g.col(2);
    const double n1 = a1.norm();
    const Vec3 w = a2 - u1.dot(a2) * u1;
    const double nw = w.norm();
    Vec3 gu1 = g1 + u2.cross(g3);
    const Vec3 gu2 = g2 + g3.cross(u1);
    const Vec3 gw = (gu2 - u2 * u2.dot(gu2)) / nw;
    const double u1gw = u1.dot(gw);
    const Vec3 ga2 = gw - u1 * u1gw;
    gu1 += -a2 * u1gw - u1.dot(a2) * gw;
    const Vec3 ga1 = (gu1 - u1 * u1.dot(gu1)) / n1;
    Matrix gr(3, 2);
    gr.col(0) = ga1;
    gr.col(1) = ga2;
    tp.accumulate(r, gr);
  });
}

Var planar(Tape& t, Var rot) {
  const Matrix& rv = t.value(rot);
  const double x1 = rv(0, 0), y1 = rv(1, 0);
  const double rho2 = x1 * x1 + y1 * y1;
  if (!(rho2 > kGimbalEps2)) throw Error(ErrorCode::kGimbalDegenerate, "first frame axis is aligned with z");
  const double theta = std::atan2(y1, x1);
  const double c = std::cos(theta), s = std::sin(theta);
  Matrix out = Rotation::about_z(theta).matrix();
  return t.record(std::move(out), {rot}, [rot, c, s, x1, y1, rho2](Tape& tp, int self) {
    const Matrix& g = tp.out_grad(self);
    const double gtheta = -s * g(0, 0) - c * g(0, 1) + c * g(1, 0) - s * g(1, 1);
    Matrix gr = Matrix::Zero(3, 3);
    gr(0, 0) = -y1 / rho2 * gtheta;
    gr(1, 0) = x1 / rho2 * gtheta;
    tp.accumulate(rot, gr);
  });
}

Graph phi(Tape& t, const PointCloud& x_de, const VNParams& params, ad::ParamSet* grads) {
  const VNConfig& cfg = params.cfg;
  const KnnGraph knn = knn_graph(x_de, cfg.q);
  Var f = t.constant(edge_features(x_de, knn).data);
  for (int l = 0; l < cfg.repeat_layers; ++l) {
    f = ad::matmul(t, f, t.param(params.weights, params.linear(l), grads));
    const Var d = ad::matmul(t, f, t.param(params.weights, params.direction(l), grads));
    f = activation(t, f, d);
  }
  Graph g;
  g.global = mean_pool(t, f);
  g.r = ad::matmul(t, g.global, t.param(params.weights, params.head(), grads));
  return g;
}

Graph canonicalize(Tape& t, const PointCloud& x, const VNParams& params, ad::ParamSet* grads) {
  const Decentered de = decenter(x);
  Graph g = phi(t, de.cloud, params, grads);
  g.mean = de.mean;
  const Vec3 r1 = t.value(g.r).col(0), r2 = t.value(g.r).col(1);
  g.degenerate = !frame_ok(r1, r2);
  if (!g.degenerate) {
    g.rotation = schmidt(t, g.r);
    if (params.cfg.mode == RotMode::kSO2) {
      const Matrix& rv = t.value(g.rotation);
      if (rv(0, 0) * rv(0, 0) + rv(1, 0) * rv(1, 0) > kGimbalEps2) {
        g.rotation = planar(t, g.rotation);
      } else {
        g.degenerate = true;
      }
    }
  }
  if (g.degenerate) g.rotation = t.constant(Matrix::Identity(3, 3));
  // Row form of R^T (x - mean): p_cn^T = p_de^T R.
  g.x_cn = ad::matmul(t, t.constant(de.cloud.points()), g.rotation);
  return g;
}

}  // namespace vn

void write_vnp1(std::ostream& out, const VNParams& params) {
  io::write_magic(out, "VNP1");
  io::write_le<std::uint32_t>(out, params.cfg.mode == RotMode::kSO3 ? 0u : 1u);
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.cfg.repeat_layers));
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.cfg.feat_dim));
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.cfg.q));
  const Eigen::VectorXd flat = params.weights.flat();
  for (Eigen::Index i = 0; i < flat.size(); ++i) io::write_le<double>(out, flat[i]);
}

VNParams read_vnp1(std::istream& in) {
  io::expect_magic(in, "VNP1");
  VNConfig cfg;
  const auto mode = io::read_le<std::uint32_t>(in);
  if (mode > 1) throw Error(ErrorCode::kFormat, "VNP1 mode must be 0 (so3) or 1 (so2)");
  cfg.mode = mode == 0 ? RotMode::kSO3 : RotMode::kSO2;
  cfg.repeat_layers = static_cast<int>(io::read_le<std::uint32_t>(in));
  cfg.feat_dim = static_cast<int>(io::read_le<std::uint32_t>(in));
  cfg.q = static_cast<int>(io::read_le<std::uint32_t>(in));
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::kFormat, std::string("VNP1 header: ") + e.what());
  }
  VNParams p = VNParams::init(cfg, 0);
  Eigen::VectorXd flat(static_cast<Eigen::Index>(p.weights.num_scalars()));
  for (Eigen::Index i = 0; i < flat.size(); ++i) flat[i] = io::read_le<double>(in);
  p.weights.set_flat(flat);
  return p;
}

}  // namespace cpol
