#include <numeric>

#include <benchmark/benchmark.h>

#include "blnet/builders.hpp"
#include "blnet/engine.hpp"
#include "blnet/trainer.hpp"

using namespace blnet;

namespace {

// One training step of the micro network: forward, loss, backward.
template <typename T>
void BM_MicroStep(benchmark::State& state) {
  const int64_t batch = state.range(0);
  const Graph g = build_preset("micro-bl");
  const Engine<T> engine(g);
  const ParamStore<T> params = engine.init_params(1);
  const auto data = make_synthetic_dataset(10, 8, 32, 1);
  std::vector<std::size_t> idx(static_cast<std::size_t>(batch));
  std::iota(idx.begin(), idx.end(), 0);
  const auto x = data.batch<T>(idx);
  const std::vector<int> labels(data.labels.begin(), data.labels.begin() + batch);
  for (auto _ : state) {
    const auto acts = engine.forward(params, x, Mode::Train);
    const auto loss = softmax_cross_entropy(acts.output(), labels);
    benchmark::DoNotOptimize(engine.backward(params, acts, loss.grad));
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_MicroStep<float>)->Arg(16)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MicroStep<double>)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_MicroForwardEval(benchmark::State& state) {
  const Graph g = build_preset("micro-bl");
  const Engine<float> engine(g);
  const auto params = engine.init_params(1);
  const auto data = make_synthetic_dataset(10, 8, 32, 1);
  std::vector<std::size_t> idx(16);
  std::iota(idx.begin(), idx.end(), 0);
  const auto x = data.batch<float>(idx);
  for (auto _ : state) benchmark::DoNotOptimize(engine.forward(params, x, Mode::Eval));
}
BENCHMARK(BM_MicroForwardEval)->Unit(benchmark::kMillisecond);

}  // namespace
