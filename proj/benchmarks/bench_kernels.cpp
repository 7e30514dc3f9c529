#include <random>

#include <benchmark/benchmark.h>

#include "blnet/kernels.hpp"

using namespace blnet;
namespace k = blnet::kernels;

namespace {

Tensor<float> random_tensor(TensorShape s, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d;
  Tensor<float> t(s);
  for (auto& v : t.data) v = d(rng);
  return t;
}

// args: channels, spatial size, kernel, algo (0 direct, 1 im2col)
void BM_Conv2d(benchmark::State& state) {
  const int64_t c = state.range(0), hw = state.range(1), kk = state.range(2);
  Conv2dParams p;
  p.in_channels = p.out_channels = c;
  p.kernel_h = p.kernel_w = kk;
  p.pad_h = p.pad_w = kk / 2;
  const auto x = random_tensor({1, c, hw, hw}, 1);
  const auto w = random_tensor({c, c, kk, kk}, 2);
  const auto algo = state.range(3) == 0 ? k::ConvAlgo::Direct : k::ConvAlgo::Im2col;
  for (auto _ : state) benchmark::DoNotOptimize(k::conv2d(x, w, nullptr, p, algo));
  state.counters["MACs"] = benchmark::Counter(static_cast<double>(c * c * kk * kk * hw * hw),
                                              benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Conv2d)
    ->ArgNames({"C", "HW", "k", "im2col"})
    ->ArgsProduct({{16, 64}, {28}, {1, 3}, {0, 1}})
    ->Unit(benchmark::kMicrosecond);

void BM_BilinearUpsample(benchmark::State& state) {
  const auto x = random_tensor({1, 64, 14, 14}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(k::bilinear_upsample(x, 2, 2));
}
BENCHMARK(BM_BilinearUpsample)->Unit(benchmark::kMicrosecond);

}  // namespace
