// Copyright 2026 The canonpolicy Authors
// SPDX-License-Identifier: Apache-2.0

#include <array>
#include <charconv>
#include <cmath>
#include <limits>
#include <ostream>
#include <random>
#include <string_view>

#include "canonpolicy/harness.hpp"

namespace cpol {

namespace {

using ad::Var;

Var squared_norm(ad::Tape& t, Var v) { return ad::sum(t, ad::mul(t, v, v)); }

Var mean_of(ad::Tape& t, const std::vector<Var>& scalars) {
  return ad::scale(t, ad::sum(t, ad::concat_rows(t, scalars)), 1.0 / static_cast<double>(scalars.size()));
}

}  // namespace

std::vector<double> train_consistency(VNParams& params, const ConsistencyConfig& cfg, std::ostream* metrics) {
  if (cfg.steps < 0 || cfg.augmentations < 2 || cfg.max_level < 1 || cfg.max_level > 3 || cfg.lr <= 0.0) {
    throw Error(ErrorCode::kConfig, "consistency needs steps >= 0, augmentations >= 2, max_level in 1..3, lr > 0");
  }
  const auto& templates = builtin_templates();
  const int q = params.cfg.q;
  std::vector<std::size_t> used;
  std::vector<bool> noisy;
  for (std::size_t i = 0; i < templates.size(); ++i) {
    const Eigen::Index n = templates[i].points.size();
    if (n <= q) continue;
    const auto lost = static_cast<Eigen::Index>(std::floor(NoiseSpec::for_level(3, 0).frac * n));
    used.push_back(i);
    noisy.push_back(n - lost > q);
  }
  if (used.size() < 2) throw Error(ErrorCode::kConfig, "consistency needs two templates larger than q");

  const int width = 3 * params.cfg.feat_dim;
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<int> level(1, cfg.max_level);
  Adam opt(params.weights, cfg.lr);
  ad::ParamSet grads = params.weights.zeros_like();
  std::vector<double> losses;
  for (int step = 1; step <= cfg.steps; ++step) {
    ad::Tape t;
    grads.set_zero();
    std::vector<Var> means, spreads;
    for (std::size_t k = 0; k < used.size(); ++k) {
      const int lv = noisy[k] ? level(rng) : 0;
      std::vector<Var> feats;
      for (int a = 0; a < cfg.augmentations; ++a) {
        const RigidTransform h = random_se3(rng, params.cfg.mode, cfg.trans_range);
        const PointCloud x = corrupt(transform(templates[used[k]].points, h), NoiseSpec::for_level(lv, rng()));
        const vn::Graph g = vn::canonicalize(t, x, params, &grads);
        const Var f = ad::matmul(t, ad::transpose(t, g.rotation), g.global);
        feats.push_back(ad::reshape(t, f, 1, width));
      }
      std::vector<Var> pairs;
      for (std::size_t i = 0; i < feats.size(); ++i) {
        for (std::size_t j = i + 1; j < feats.size(); ++j) pairs.push_back(squared_norm(t, ad::sub(t, feats[i], feats[j])));
      }
      spreads.push_back(mean_of(t, pairs));
      means.push_back(ad::mean_rows(t, ad::concat_rows(t, feats)));
    }
    std::vector<Var> terms;
    for (std::size_t k = 0; k < used.size(); ++k) {
      if (!noisy[k]) continue;
      Var nearest;
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < used.size(); ++j) {
        if (j == k) continue;
        const Var d = squared_norm(t, ad::sub(t, means[k], means[j]));
        if (t.value(d)(0, 0) < best) {
          best = t.value(d)(0, 0);
          nearest = d;
        }
      }
      // Keeps both logs finite should a spread or distance vanish.
      const Var eps = t.constant(ad::Matrix::Constant(1, 1, 1e-12));
      terms.push_back(ad::sub(t, ad::log(t, ad::add(t, spreads[k], eps)), ad::log(t, ad::add(t, nearest, eps))));
    }
    if (terms.empty()) throw Error(ErrorCode::kConfig, "no template is large enough to corrupt at consistency.max_level");
    const Var loss = mean_of(t, terms);
    t.backward(loss);
    opt.step(params.weights, grads);
    losses.push_back(t.value(loss)(0, 0));
    if (metrics && cfg.log_every > 0 && step % cfg.log_every == 0) {
      std::array<char, 64> buf;
      const auto r = std::to_chars(buf.data(), buf.data() + buf.size(), losses.back());
      *metrics << step << " consistency_loss " << std::string_view(buf.data(), r.ptr) << '\n';
    }
  }
  return losses;
}

}  // namespace cpol
