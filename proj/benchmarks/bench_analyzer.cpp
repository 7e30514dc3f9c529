#include <string>
#include <vector>

#include <benchmark/benchmark.h>

#include "blnet/analyzer.hpp"
#include "blnet/builders.hpp"
#include "blnet/shape_inference.hpp"

using namespace blnet;

namespace {

const std::vector<std::string> kPresets = {"resnet50", "bl-resnet50", "bl-resnet152", "bl-resnext101_64x4d",
                                           "speech-bl22"};

void BM_BuildPreset(benchmark::State& state) {
  const std::string& id = kPresets[state.range(0)];
  state.SetLabel(id);
  for (auto _ : state) benchmark::DoNotOptimize(build_preset(id));
}
BENCHMARK(BM_BuildPreset)->DenseRange(0, 4)->Unit(benchmark::kMicrosecond);

void BM_CountGraph(benchmark::State& state) {
  const std::string& id = kPresets[state.range(0)];
  const Graph g = build_preset(id);
  const TensorShape in = *declared_input_shape(g);
  state.SetLabel(id);
  for (auto _ : state) benchmark::DoNotOptimize(count_graph(g, in));
}
BENCHMARK(BM_CountGraph)->DenseRange(0, 4)->Unit(benchmark::kMicrosecond);

}  // namespace
