// Copyright 2026 The sonoclass Authors
// SPDX-License-Identifier: Apache-2.0
//
// Serial reference vs OpenMP/BLAS kernels on shapes from the desk-scale
// ensemble (batch 32).

#include <benchmark/benchmark.h>

#include <vector>

#include "sonoclass/augment.hpp"
#include "sonoclass/kernels.hpp"
#include "sonoclass/rng.hpp"

namespace {

using sono::kernels::ConvGeometry;

std::vector<double> noise(std::size_t n, std::uint64_t seed) {
  sono::SampleRng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

// Layer index into the detailed branch: 64×64×3 → 8 → 16 → 32 → 64 → 64.
ConvGeometry layer(std::int64_t i) {
  static const std::size_t chans[] = {3, 8, 16, 32, 64, 64};
  ConvGeometry g;
  g.batch = 32;
  g.in_channels = chans[i];
  g.out_channels = chans[i + 1];
  g.height = g.width = 64 >> i;
  g.kernel_h = g.kernel_w = 3;
  g.stride = 2;
  g.padding = 1;
  return g;
}

struct ConvData {
  ConvGeometry g;
  std::vector<double> in, k, b, out, dout, din, dk, db;
  explicit ConvData(std::int64_t i)
      : g(layer(i)),
        in(noise(g.input_size(), 1)),
        k(noise(g.kernel_size(), 2)),
        b(noise(g.out_channels, 3)),
        out(g.output_size()),
        dout(noise(g.output_size(), 4)),
        din(g.input_size()),
        dk(g.kernel_size()),
        db(g.out_channels) {}
};

void BM_ConvForwardReference(benchmark::State& state) {
  ConvData d(state.range(0));
  for (auto _ : state) {
    sono::kernels::reference::conv2d_forward(d.g, d.in, d.k, d.b, d.out);
    benchmark::DoNotOptimize(d.out.data());
  }
}

void BM_ConvForwardParallel(benchmark::State& state) {
  ConvData d(state.range(0));
  for (auto _ : state) {
    sono::kernels::parallel::conv2d_forward(d.g, d.in, d.k, d.b, d.out);
    benchmark::DoNotOptimize(d.out.data());
  }
}

void BM_ConvBackwardReference(benchmark::State& state) {
  ConvData d(state.range(0));
  for (auto _ : state) {
    sono::kernels::reference::conv2d_backward(d.g, d.in, d.k, d.dout, d.din, d.dk, d.db);
    benchmark::DoNotOptimize(d.dk.data());
  }
}

void BM_ConvBackwardParallel(benchmark::State& state) {
  ConvData d(state.range(0));
  for (auto _ : state) {
    sono::kernels::parallel::conv2d_backward(d.g, d.in, d.k, d.dout, d.din, d.dk, d.db);
    benchmark::DoNotOptimize(d.dk.data());
  }
}

BENCHMARK(BM_ConvForwardReference)->DenseRange(0, 4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvForwardParallel)->DenseRange(0, 4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackwardReference)->DenseRange(0, 4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackwardParallel)->DenseRange(0, 4)->Unit(benchmark::kMillisecond);

void BM_BlurDirect(benchmark::State& state) {
  const auto k = sono::augment::make_blur_kernel(static_cast<double>(state.range(0)) / 10.0);
  const auto img = noise(128 * 128 * 3, 5);
  std::vector<double> out(img.size());
  for (auto _ : state) {
    sono::kernels::reference::blur_2d(img, 128, 128, 3, k.weights, k.radius, out);
    benchmark::DoNotOptimize(out.data());
  }
}

void BM_BlurSeparable(benchmark::State& state) {
  const auto k = sono::augment::make_blur_kernel(static_cast<double>(state.range(0)) / 10.0);
  const auto img = noise(128 * 128 * 3, 5);
  std::vector<double> out(img.size());
  for (auto _ : state) {
    sono::kernels::parallel::blur_separable(img, 128, 128, 3, k.weights1d, k.radius, out);
    benchmark::DoNotOptimize(out.data());
  }
}

// sigma × 10
BENCHMARK(BM_BlurDirect)->Arg(5)->Arg(15)->Arg(30)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_BlurSeparable)->Arg(5)->Arg(15)->Arg(30)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
