#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "blnet/graph.hpp"
#include "blnet/kernels.hpp"
#include "blnet/tensor.hpp"

namespace blnet {

enum class Mode { Train, Eval };

inline constexpr double kBatchNormMomentum = 0.9;

// Weight declared by a node: conv weight/bias, BN gamma/beta/running_mean/running_var,
// linear weight/bias. Running statistics are not trainable.
struct WeightSpec {
  std::string name;
  TensorShape shape;
  bool trainable = true;
};

std::vector<WeightSpec> weight_specs(const LayerSpec& spec);

template <typename T>
class ParamStore {
 public:
  using Entry = std::map<std::string, Tensor<T>>;

  void set(const std::string& node, const std::string& name, Tensor<T> value) {
    entries_[node][name] = std::move(value);
  }
  bool contains(const std::string& node, const std::string& name) const;
  // Throws MissingParam.
  Tensor<T>& at(const std::string& node, const std::string& name);
  const Tensor<T>& at(const std::string& node, const std::string& name) const;

  const std::map<std::string, Entry>& entries() const { return entries_; }
  std::map<std::string, Entry>& entries() { return entries_; }

  // Scalar count over every stored tensor, running statistics included.
  std::size_t scalar_count() const;
  uint64_t fingerprint() const;

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [node, entry] : entries_)
      for (const auto& [name, t] : entry) {
        Tensor<U> u(t.shape);
        for (std::size_t i = 0; i < t.size(); ++i) u.data[i] = static_cast<U>(t.data[i]);
        out.set(node, name, std::move(u));
      }
    return out;
  }

  bool operator==(const ParamStore&) const = default;

 private:
  std::map<std::string, Entry> entries_;
};

// Same keys and shapes as the ParamStore it was built for, plus the input gradient.
template <typename T>
struct GradStore {
  ParamStore<T> params;
  Tensor<T> input;
};

template <typename T>
struct Activations {
  Mode mode = Mode::Eval;
  std::unordered_map<std::string, Tensor<T>> values;
  std::unordered_map<std::string, kernels::BatchStats<T>> batch_stats;
  std::vector<std::string> outputs;
  uint64_t graph_fingerprint = 0;
  uint64_t params_fingerprint = 0;

  const Tensor<T>& at(const std::string& id) const;
  const Tensor<T>& output() const { return at(outputs.front()); }
};

// Executes one validated graph. forward/backward never mutate the ParamStore;
// update_running_stats is the explicit hook for BN bookkeeping.
template <typename T>
class Engine {
 public:
  explicit Engine(Graph graph, kernels::ConvAlgo algo = kernels::ConvAlgo::Auto);

  const Graph& graph() const { return graph_; }
  const TensorShape& declared_input() const { return input_shape_; }

  // Fan-in scaled normal (std = sqrt(2 / fan_in)) for conv and linear weights,
  // zero biases, BN gamma 1, beta 0, running mean 0, running var 1.
  ParamStore<T> init_params(uint64_t seed) const;
  // Throws MissingParam or ShapeMismatch.
  void check_params(const ParamStore<T>& params) const;

  Activations<T> forward(const ParamStore<T>& params, const Tensor<T>& input, Mode mode) const;
  // output_grad is the loss gradient with respect to the first graph output.
  GradStore<T> backward(const ParamStore<T>& params, const Activations<T>& acts, const Tensor<T>& output_grad) const;
  void update_running_stats(ParamStore<T>& params, const Activations<T>& acts,
                            double momentum = kBatchNormMomentum) const;

 private:
  Graph graph_;
  kernels::ConvAlgo algo_;
  std::vector<std::size_t> order_;
  std::vector<std::vector<std::size_t>> preds_;
  TensorShape input_shape_;
  uint64_t fingerprint_ = 0;
};

template <typename T>
struct LossResult {
  double loss = 0.0;
  Tensor<T> grad;
};

// Mean softmax cross-entropy over the batch; logits are (N, classes, 1, 1).
template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

// Binary format: "BLNETCKP", u32 version, u32 precision, u64 entry count, then per
// entry u32 key length, key "node/name", four i64 extents and little-endian values.
// Writes go to a temporary file that is renamed into place.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParamStore<T>& params);
// Converts to T when the file holds the other precision.
template <typename T>
ParamStore<T> load_checkpoint(const std::filesystem::path& path);
Precision checkpoint_precision(const std::filesystem::path& path);

}  // namespace blnet
