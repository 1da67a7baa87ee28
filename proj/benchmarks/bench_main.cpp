// Copyright 2026 The canonpolicy Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include <random>

#include "canonpolicy/harness.hpp"

namespace cpol {
namespace {

PointCloud cloud(Eigen::Index n) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 1.0);
  PointMatrix p(n, 3);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = g(rng);
  return PointCloud(std::move(p));
}

void BM_Knn(benchmark::State& s) {
  const PointCloud x = cloud(s.range(0));
  for (auto _ : s) benchmark::DoNotOptimize(knn_graph(x, 10));
  s.SetComplexityN(s.range(0));
}
BENCHMARK(BM_Knn)->RangeMultiplier(2)->Range(64, 1024)->Complexity();

void BM_ForwardPhi(benchmark::State& s) {
  const VNParams params = VNParams::init(VNConfig{}, 1);
  const PointCloud x = decenter(cloud(s.range(0))).cloud;
  for (auto _ : s) benchmark::DoNotOptimize(forward_phi(x, params));
}
BENCHMARK(BM_ForwardPhi)->Arg(64)->Arg(256);

void BM_Canonicalize(benchmark::State& s) {
  VNConfig c;
  c.q = 8;
  const VNParams params = VNParams::init(c, 1);
  const PointCloud& x = builtin_templates()[static_cast<std::size_t>(template_index("mug"))].points;
  for (auto _ : s) benchmark::DoNotOptimize(estimate_rotation(x, params));
}
BENCHMARK(BM_Canonicalize);

void BM_Encode(benchmark::State& s) {
  const EncoderParams params = EncoderParams::init(EncoderConfig{}, 1);
  const PointCloud x = cloud(s.range(0));
  for (auto _ : s) benchmark::DoNotOptimize(encode(x, params));
}
BENCHMARK(BM_Encode)->Arg(64)->Arg(256);

// One epoch of the desk setup, 64 demos, batch 16.
void BM_TrainEpoch(benchmark::State& s) {
  PolicyConfig c;
  c.head_kind = HeadKind::kFlow;
  c.vn.repeat_layers = 2;
  c.vn.feat_dim = 16;
  c.vn.q = 8;
  c.enc.q = 8;
  c.enc.widths = {32, 64};
  c.enc.out_dim = 64;
  c.head.hidden = 128;
  c.head.blocks = 2;
  DataConfig dc;
  const int tid = template_index("box_stack");
  const auto eps = generate_dataset(builtin_templates()[static_cast<std::size_t>(tid)], tid, dc, 64, c.obs_window,
                                    c.horizon, c.vn.mode, 7);
  std::vector<Demo> demos;
  for (const auto& e : eps) demos.push_back(e.demo);
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 16;
  for (auto _ : s) {
    s.PauseTiming();
    Policy p = Policy::init(c, 1);
    s.ResumeTiming();
    benchmark::DoNotOptimize(train(p, demos, tc, nullptr));
  }
}
BENCHMARK(BM_TrainEpoch)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace cpol

BENCHMARK_MAIN();
