// Copyright 2026 The canonpolicy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "canonpolicy/error.hpp"

// Tape-based reverse mode over dense float64 matrices. Every node is a
// matrix; parents are always recorded before children, so backward is a
// single reverse sweep over insertion order.
namespace cpol::ad {

using Matrix = Eigen::MatrixXd;

/// Ordered list of named parameter tensors with a flat-vector view.
class ParamSet {
 public:
  std::size_t add(std::string name, Eigen::Index rows, Eigen::Index cols);

  std::size_t size() const { return tensors_.size(); }
  Matrix& operator[](std::size_t i) { return tensors_[i]; }
  const Matrix& operator[](std::size_t i) const { return tensors_[i]; }
  const std::string& name(std::size_t i) const { return names_[i]; }

  std::size_t num_scalars() const;
  Eigen::VectorXd flat() const;
  void set_flat(const Eigen::VectorXd& v);
  ParamSet zeros_like() const;
  void set_zero();
  ParamSet& operator+=(const ParamSet& o);
  bool operator==(const ParamSet& o) const;

 private:
  std::vector<std::string> names_;
  std::vector<Matrix> tensors_;
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  Var constant(Matrix value);
  /// Leaf bound to `ps[i]` without copying; gradients are added to
  /// `(*grads)[i]` during backward when `grads` is non-null.
  Var param(const ParamSet& ps, std::size_t i, ParamSet* grads);
  /// Node whose value was computed by the caller and whose backward
  /// propagates into `parents`. Becomes a constant when no parent needs grad.
  Var record(Matrix value, std::initializer_list<Var> parents, BackwardFn backward);
  Var record(Matrix value, std::span<const Var> parents, BackwardFn backward);

  const Matrix& value(Var v) const { return node(v.id).value_ref(); }
  bool requires_grad(Var v) const { return node(v.id).requires_grad; }
  /// Gradient accumulated so far (zeros if none reached the node).
  const Matrix& grad(Var v);
  /// Adds `g` into the gradient of `v` if `v` requires grad.
  void accumulate(Var v, const Matrix& g);
  template <typename Fn>
  void accumulate_with(Var v, Fn&& fill) {
    Node& n = node(v.id);
    if (!n.requires_grad) return;
    ensure_grad(n);
    fill(n.grad);
  }
  const Matrix& out_grad(int self) const { return node(self).grad; }

  /// Seeds d(root)/d(root) = 1 for a 1x1 root and sweeps backward once.
  void backward(Var root);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    const Matrix* ref = nullptr;
    Matrix grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
    Matrix* sink = nullptr;

    const Matrix& value_ref() const { return ref ? *ref : value; }
  };

  Node& node(int id);
  const Node& node(int id) const;
  void ensure_grad(Node& n);

  std::deque<Node> nodes_;
};

// Generic ops. Shapes are checked and mismatches throw kShapeMismatch.
Var matmul(Tape& t, Var a, Var b);
Var transpose(Tape& t, Var a);
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double s);
/// a + row, broadcasting a 1 x C row over every row of a.
Var add_row(Tape& t, Var a, Var row);
/// a * row (elementwise), broadcasting a 1 x C row over every row of a.
Var mul_row(Tape& t, Var a, Var row);
/// (a - shift) .* mul with constant 1 x C rows.
Var affine_const(Tape& t, Var a, const Eigen::RowVectorXd& shift, const Eigen::RowVectorXd& mul);
Var silu(Tape& t, Var a);
Var tanh(Tape& t, Var a);
/// Elementwise natural log; entries must be positive.
Var log(Tape& t, Var a);
Var concat_cols(Tape& t, std::span<const Var> parts);
Var concat_rows(Tape& t, std::span<const Var> parts);
Var slice_cols(Tape& t, Var a, Eigen::Index start, Eigen::Index count);
Var slice_rows(Tape& t, Var a, Eigen::Index start, Eigen::Index count);
/// Row-major reinterpretation to rows x cols.
Var reshape(Tape& t, Var a, Eigen::Index rows, Eigen::Index cols);
/// Column-wise max over rows; ties resolve to the first row.
Var max_rows(Tape& t, Var a);
Var mean_rows(Tape& t, Var a);
Var sum(Tape& t, Var a);
/// Mean of squared entries of (a - b).
Var mse(Tape& t, Var a, Var b);

/// Row-major flatten of an Eigen matrix into a 1 x (r*c) row.
Eigen::RowVectorXd flatten_row_major(const Matrix& m);

}  // namespace cpol::ad
