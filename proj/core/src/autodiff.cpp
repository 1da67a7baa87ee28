// Copyright 2026 The canonpolicy Authors
// SPDX-License-Identifier: Apache-2.0

#include "canonpolicy/autodiff.hpp"

#include <cmath>
#include <string>

namespace cpol::ad {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw Error(ErrorCode::kShapeMismatch, what);
}

}  // namespace

std::size_t ParamSet::add(std::string name, Eigen::Index rows, Eigen::Index cols) {
  names_.push_back(std::move(name));
  tensors_.push_back(Matrix::Zero(rows, cols));
  return tensors_.size() - 1;
}

std::size_t ParamSet::num_scalars() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += static_cast<std::size_t>(t.size());
  return n;
}

Eigen::VectorXd ParamSet::flat() const {
  Eigen::VectorXd v(static_cast<Eigen::Index>(num_scalars()));
  Eigen::Index off = 0;
  for (const auto& t : tensors_) {
    v.segment(off, t.size()) = t.reshaped<Eigen::RowMajor>();
    off += t.size();
  }
  return v;
}

void ParamSet::set_flat(const Eigen::VectorXd& v) {
  require(v.size() == static_cast<Eigen::Index>(num_scalars()), "flat parameter size mismatch");
  Eigen::Index off = 0;
  for (auto& t : tensors_) {
    t.reshaped<Eigen::RowMajor>() = v.segment(off, t.size());
    off += t.size();
  }
}

ParamSet ParamSet::zeros_like() const {
  ParamSet z;
  for (std::size_t i = 0; i < tensors_.size(); ++i) z.add(names_[i], tensors_[i].rows(), tensors_[i].cols());
  return z;
}

void ParamSet::set_zero() {
  for (auto& t : tensors_) t.setZero();
}

ParamSet& ParamSet::operator+=(const ParamSet& o) {
  require(o.size() == size(), "parameter set size mismatch");
  for (std::size_t i = 0; i < tensors_.size(); ++i) tensors_[i] += o.tensors_[i];
  return *this;
}

bool ParamSet::operator==(const ParamSet& o) const {
  if (o.size() != size()) return false;
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    if (tensors_[i].rows() != o.tensors_[i].rows() || tensors_[i].cols() != o.tensors_[i].cols() ||
        tensors_[i] != o.tensors_[i]) {
      return false;
    }
  }
  return true;
}

Tape::Node& Tape::node(int id) {
  require(id >= 0 && static_cast<std::size_t>(id) < nodes_.size(), "invalid tape variable");
  return nodes_[static_cast<std::size_t>(id)];
}

const Tape::Node& Tape::node(int id) const {
  require(id >= 0 && static_cast<std::size_t>(id) < nodes_.size(), "invalid tape variable");
  return nodes_[static_cast<std::size_t>(id)];
}

void Tape::ensure_grad(Node& n) {
  if (!n.has_grad) {
    const Matrix& v = n.value_ref();
    n.grad = Matrix::Zero(v.rows(), v.cols());
    n.has_grad = true;
  }
}

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {static_cast<int>(nodes_.size() - 1)};
}

Var Tape::param(const ParamSet& ps, std::size_t i, ParamSet* grads) {
  Node n;
  n.ref = &ps[i];
  n.requires_grad = grads != nullptr;
  n.sink = grads ? &(*grads)[i] : nullptr;
  nodes_.push_back(std::move(n));
  return {static_cast<int>(nodes_.size() - 1)};
}

Var Tape::record(Matrix value, std::initializer_list<Var> parents, BackwardFn backward) {
  return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
                std::move(backward));
}

Var Tape::record(Matrix value, std::span<const Var> parents, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (const Var& p : parents) {
    if (node(p.id).requires_grad) {
      n.requires_grad = true;
      break;
    }
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {static_cast<int>(nodes_.size() - 1)};
}

const Matrix& Tape::grad(Var v) {
  Node& n = node(v.id);
  ensure_grad(n);
  return n.grad;
}

void Tape::accumulate(Var v, const Matrix& g) {
  Node& n = node(v.id);
  if (!n.requires_grad) return;
  ensure_grad(n);
  require(n.grad.rows() == g.rows() && n.grad.cols() == g.cols(), "gradient shape mismatch");
  n.grad += g;
}

void Tape::backward(Var root) {
  Node& r = node(root.id);
  require(r.value_ref().size() == 1, "backward needs a scalar root");
  if (!r.requires_grad) return;
  ensure_grad(r);
  r.grad(0, 0) += 1.0;
  for (int id = root.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.has_grad || !n.requires_grad) continue;
    if (n.backward) n.backward(*this, id);
    if (n.sink) *n.sink += n.grad;
  }
}

Var matmul(Tape& t, Var a, Var b) {
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  require(av.cols() == bv.rows(), "matmul inner dimensions differ");
  return t.record(av * bv, {a, b}, [a, b](Tape& tp, int self) {
    const Matrix& g = tp.out_grad(self);
    if (tp.requires_grad(a)) tp.accumulate_with(a, [&](Matrix& ga) { ga.noalias() += g * tp.value(b).transpose(); });
    if (tp.requires_grad(b)) tp.accumulate_with(b, [&](Matrix& gb) { gb.noalias() += tp.value(a).transpose() * g; });
  });
}

Var transpose(Tape& t, Var a) {
  return t.record(t.value(a).transpose(), {a}, [a](Tape& tp, int self) {
    tp.accumulate_with(a, [&](Matrix& ga) { ga += tp.out_grad(self).transpose(); });
  });
}

Var add(Tape& t, Var a, Var b) {
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  require(av.rows() == bv.rows() && av.cols() == bv.cols(), "add shape mismatch");
  return t.record(av + bv, {a, b}, [a, b](Tape& tp, int self) {
    tp.accumulate(a, tp.out_grad(self));
    tp.accumulate(b, tp.out_grad(self));
  });
}

Var sub(Tape& t, Var a, Var b) {
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  require(av.rows() == bv.rows() && av.cols() == bv.cols(), "sub shape mismatch");
  return t.record(av - bv, {a, b}, [a, b](Tape& tp, int self) {
    tp.accumulate(a, tp.out_grad(self));
    tp.accumulate_with(b, [&](Matrix& gb) { gb -= tp.out_grad(self); });
  });
}

Var mul(Tape& t, Var a, Var b) {
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  require(av.rows() == bv.rows() && av.cols() == bv.cols(), "mul shape mismatch");
  return t.record(av.cwiseProduct(bv), {a, b}, [a, b](Tape& tp, int self) {
    const Matrix& g = tp.out_grad(self);
    tp.accumulate_with(a, [&](Matrix& ga) { ga += g.cwiseProduct(tp.value(b)); });
    tp.accumulate_with(b, [&](Matrix& gb) { gb += g.cwiseProduct(tp.value(a)); });
  });
}

Var scale(Tape& t, Var a, double s) {
  return t.record(s * t.value(a), {a}, [a, s](Tape& tp, int self) {
    tp.accumulate_with(a, [&](Matrix& ga) { ga += s * tp.out_grad(self); });
  });
}

Var add_row(Tape& t, Var a, Var row) {
  const Matrix& av = t.value(a);
  const Matrix& rv = t.value(row);
  require(rv.rows() == 1 && rv.cols() == av.cols(), "add_row expects a 1 x C row");
  Matrix out = av.rowwise() + rv.row(0);
  return t.record(std::move(out), {a, row}, [a, row](Tape& tp, int self) {
    tp.accumulate(a, tp.out_grad(self));
    tp.accumulate_with(row, [&](Matrix& gr) { gr += tp.out_grad(self).colwise().sum(); });
  });
}

Var mul_row(Tape& t, Var a, Var row) {
  const Matrix& av = t.value(a);
  const Matrix& rv = t.value(row);
  require(rv.rows() == 1 && rv.cols() == av.cols(), "mul_row expects a 1 x C row");
  Matrix out = av.array().rowwise() * rv.row(0).array();
  return t.record(std::move(out), {a, row}, [a, row](Tape& tp, int self) {
    const Matrix& g = tp.out_grad(self);
    tp.accumulate_with(a, [&](Matrix& ga) {
      ga.array() += g.array().rowwise() * tp.value(row).row(0).array();
    });
    tp.accumulate_with(row, [&](Matrix& gr) { gr += g.cwiseProduct(tp.value(a)).colwise().sum(); });
  });
}

Var affine_const(Tape& t, Var a, const Eigen::RowVectorXd& shift, const Eigen::RowVectorXd& mul) {
  const Matrix& av = t.value(a);
  require(shift.size() == av.cols() && mul.size() == av.cols(), "affine_const row size mismatch");
  Matrix out = (av.rowwise() - shift).array().rowwise() * mul.array();
  return t.record(std::move(out), {a}, [a, mul](Tape& tp, int self) {
    tp.accumulate_with(a, [&](Matrix& ga) { ga.array() += tp.out_grad(self).array().rowwise() * mul.array(); });
  });
}

Var silu(Tape& t, Var a) {
  const Matrix& av = t.value(a);
  Matrix sig = (1.0 + (-av.array()).exp()).inverse().matrix();
  Matrix out = av.cwiseProduct(sig);
  return t.record(std::move(out), {a}, [a, sig = std::move(sig)](Tape& tp, int self) {
    const Matrix& x = tp.value(a);
    tp.accumulate_with(a, [&](Matrix& ga) {
      ga.array() += tp.out_grad(self).array() *
                    (sig.array() * (1.0 + x.array() * (1.0 - sig.array())));
    });
  });
}

Var tanh(Tape& t, Var a) {
  Matrix out = t.value(a).array().tanh().matrix();
  return t.record(out, {a}, [a, out](Tape& tp, int self) {
    tp.accumulate_with(a, [&](Matrix& ga) {
      ga.array() += tp.out_grad(self).array() * (1.0 - out.array().square());
    });
  });
}

Var log(Tape& t, Var a) {
  const Matrix& av = t.value(a);
  require((av.array() > 0.0).all(), "log of a non-positive entry");
  const Matrix inv = av.cwiseInverse();
  return t.record(av.array().log().matrix(), {a}, [a, inv](Tape& tp, int self) {
    tp.accumulate_with(a, [&](Matrix& ga) { ga.array() += tp.out_grad(self).array() * inv.array(); });
  });
}

Var concat_cols(Tape& t, std::span<const Var> parts) {
  require(!parts.empty(), "concat of nothing");
  const Eigen::Index rows = t.value(parts[0]).rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    require(t.value(p).rows() == rows, "concat_cols row mismatch");
    cols += t.value(p).cols();
  }
  Matrix out(rows, cols);
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    out.middleCols(off, t.value(p).cols()) = t.value(p);
    off += t.value(p).cols();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return t.record(std::move(out), parts, [ps](Tape& tp, int self) {
    Eigen::Index o = 0;
    for (const Var& p : ps) {
      const Eigen::Index c = tp.value(p).cols();
      tp.accumulate_with(p, [&](Matrix& gp) { gp += tp.out_grad(self).middleCols(o, c); });
      o += c;
    }
  });
}

Var concat_rows(Tape& t, std::span<const Var> parts) {
  require(!parts.empty(), "concat of nothing");
  const Eigen::Index cols = t.value(parts[0]).cols();
  Eigen::Index rows = 0;
  for (const Var& p : parts) {
    require(t.value(p).cols() == cols, "concat_rows column mismatch");
    rows += t.value(p).rows();
  }
  Matrix out(rows, cols);
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    out.middleRows(off, t.value(p).rows()) = t.value(p);
    off += t.value(p).rows();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return t.record(std::move(out), parts, [ps](Tape& tp, int self) {
    Eigen::Index o = 0;
    for (const Var& p : ps) {
      const Eigen::Index r = tp.value(p).rows();
      tp.accumulate_with(p, [&](Matrix& gp) { gp += tp.out_grad(self).middleRows(o, r); });
      o += r;
    }
  });
}

Var slice_cols(Tape& t, Var a, Eigen::Index start, Eigen::Index count) {
  const Matrix& av = t.value(a);
  require(start >= 0 && count >= 0 && start + count <= av.cols(), "slice_cols out of range");
  return t.record(av.middleCols(start, count), {a}, [a, start, count](Tape& tp, int self) {
    tp.accumulate_with(a, [&](Matrix& ga) { ga.middleCols(start, count) += tp.out_grad(self); });
  });
}

Var slice_rows(Tape& t, Var a, Eigen::Index start, Eigen::Index count) {
  const Matrix& av = t.value(a);
  require(start >= 0 && count >= 0 && start + count <= av.rows(), "slice_rows out of range");
  return t.record(av.middleRows(start, count), {a}, [a, start, count](Tape& tp, int self) {
    tp.accumulate_with(a, [&](Matrix& ga) { ga.middleRows(start, count) += tp.out_grad(self); });
  });
}

Var reshape(Tape& t, Var a, Eigen::Index rows, Eigen::Index cols) {
  const Matrix& av = t.value(a);
  require(rows * cols == av.size(), "reshape size mismatch");
  const Eigen::Index in_cols = av.cols();
  Matrix out(rows, cols);
  for (Eigen::Index k = 0; k < av.size(); ++k) out(k / cols, k % cols) = av(k / in_cols, k % in_cols);
  return t.record(std::move(out), {a}, [a, cols, in_cols](Tape& tp, int self) {
    const Matrix& g = tp.out_grad(self);
    tp.accumulate_with(a, [&](Matrix& ga) {
      for (Eigen::Index k = 0; k < g.size(); ++k) ga(k / in_cols, k % in_cols) += g(k / cols, k % cols);
    });
  });
}

Var max_rows(Tape& t, Var a) {
  const Matrix& av = t.value(a);
  require(av.rows() >= 1, "max over zero rows");
  Matrix out(1, av.cols());
  std::vector<Eigen::Index> arg(static_cast<std::size_t>(av.cols()));
  for (Eigen::Index c = 0; c < av.cols(); ++c) {
    Eigen::Index best = 0;
    for (Eigen::Index r = 1; r < av.rows(); ++r) {
      if (av(r, c) > av(best, c)) best = r;
    }
    arg[static_cast<std::size_t>(c)] = best;
    out(0, c) = av(best, c);
  }
  return t.record(std::move(out), {a}, [a, arg = std::move(arg)](Tape& tp, int self) {
    const Matrix& g = tp.out_grad(self);
    tp.accumulate_with(a, [&](Matrix& ga) {
      for (std::size_t c = 0; c < arg.size(); ++c) {
        ga(arg[c], static_cast<Eigen::Index>(c)) += g(0, static_cast<Eigen::Index>(c));
      }
    });
  });
}

Var mean_rows(Tape& t, Var a) {
  const Matrix& av = t.value(a);
  require(av.rows() >= 1, "mean over zero rows");
  const double inv = 1.0 / static_cast<double>(av.rows());
  return t.record(av.colwise().mean(), {a}, [a, inv](Tape& tp, int self) {
    tp.accumulate_with(a, [&](Matrix& ga) { ga.rowwise() += inv * tp.out_grad(self).row(0); });
  });
}

Var sum(Tape& t, Var a) {
  Matrix out(1, 1);
  out(0, 0) = t.value(a).sum();
  return t.record(std::move(out), {a}, [a](Tape& tp, int self) {
    const double g = tp.out_grad(self)(0, 0);
    tp.accumulate_with(a, [&](Matrix& ga) { ga.array() += g; });
  });
}

Var mse(Tape& t, Var a, Var b) {
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  require(av.rows() == bv.rows() && av.cols() == bv.cols(), "mse shape mismatch");
  Matrix diff = av - bv;
  const double inv = 1.0 / static_cast<double>(diff.size());
  Matrix out(1, 1);
  out(0, 0) = diff.squaredNorm() * inv;
  return t.record(std::move(out), {a, b}, [a, b, inv, diff = std::move(diff)](Tape& tp, int self) {
    const double g = tp.out_grad(self)(0, 0) * 2.0 * inv;
    tp.accumulate_with(a, [&](Matrix& ga) { ga += g * diff; });
    tp.accumulate_with(b, [&](Matrix& gb) { gb -= g * diff; });
  });
}

Eigen::RowVectorXd flatten_row_major(const Matrix& m) {
  Eigen::RowVectorXd out(m.size());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out(r * m.cols() + c) = m(r, c);
  }
  return out;
}

}  // namespace cpol::ad
