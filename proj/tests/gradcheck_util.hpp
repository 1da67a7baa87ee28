// Copyright 2026 The canonpolicy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <random>

#include "canonpolicy/autodiff.hpp"
#include "test_util.hpp"

namespace cpol::testing {

/// Builds a graph from parameter leaves; the scalar loss is a fixed random
/// weighting of the returned node.
using GraphFn = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

/// Relative error between reverse-mode and central-difference gradients of
/// sum(out .* W) with respect to every scalar in `ps`.
inline double gradcheck(const ad::ParamSet& ps, const GraphFn& build, std::uint64_t seed = 1,
                        double step = 1e-6) {
  ad::Matrix weights;
  auto loss_of = [&](const ad::ParamSet& p, ad::ParamSet* grads) {
    ad::Tape t;
    std::vector<ad::Var> leaves;
    for (std::size_t i = 0; i < p.size(); ++i) leaves.push_back(t.param(p, i, grads));
    const ad::Var out = build(t, leaves);
    if (weights.size() == 0) {
      std::mt19937_64 rng(seed);
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      weights = ad::Matrix(t.value(out).rows(), t.value(out).cols());
      for (Eigen::Index i = 0; i < weights.size(); ++i) weights.data()[i] = u(rng);
    }
    const ad::Var loss = ad::sum(t, ad::mul(t, out, t.constant(weights)));
    const double v = t.value(loss)(0, 0);
    if (grads) t.backward(loss);
    return v;
  };
  ad::ParamSet grads = ps.zeros_like();
  loss_of(ps, &grads);
  const Eigen::VectorXd analytic = grads.flat();
  const Eigen::VectorXd x0 = ps.flat();
  std::vector<Eigen::Index> coords(static_cast<std::size_t>(x0.size()));
  for (Eigen::Index i = 0; i < x0.size(); ++i) coords[static_cast<std::size_t>(i)] = i;
  ad::ParamSet work = ps;
  const Eigen::VectorXd numeric = finite_differences(
      [&](const Eigen::VectorXd& x) {
        work.set_flat(x);
        return loss_of(work, nullptr);
      },
      x0, coords, step);
  return relative_error(analytic, numeric);
}

inline ad::ParamSet random_params(std::mt19937_64& rng, std::initializer_list<std::pair<int, int>> shapes) {
  ad::ParamSet ps;
  std::normal_distribution<double> g(0.0, 1.0);
  int k = 0;
  for (const auto& [r, c] : shapes) {
    const std::size_t i = ps.add("p" + std::to_string(k++), r, c);
    for (Eigen::Index j = 0; j < ps[i].size(); ++j) ps[i].data()[j] = g(rng);
  }
  return ps;
}

}  // namespace cpol::testing
