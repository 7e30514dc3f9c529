#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "blnet/graph.hpp"
#include "blnet/tensor_shape.hpp"

namespace blnet {

// Counting rules. FLOPs are multiply-accumulates of Conv2d and Linear nodes
// for one sample; parameters are conv kernels and biases, BatchNorm scale and
// shift, and Linear weights and biases.
struct CostConvention {
  // Skip parameters of nodes listed in the graph's "exclude_params" metadata.
  bool honor_param_exclusions = true;

  std::string describe() const;
};

struct LayerCost {
  int64_t flops = 0;
  int64_t params = 0;
};

struct NodeCost {
  std::string id;
  std::string kind;
  std::string stage;
  TensorShape output;
  int64_t flops = 0;
  int64_t params = 0;
};

struct StageCost {
  std::string stage;
  int64_t flops = 0;
  int64_t params = 0;
};

struct CostReport {
  std::string graph_name;
  std::string convention;
  TensorShape input;
  std::vector<NodeCost> nodes;
  std::vector<StageCost> stages;  // in first-appearance order
  int64_t total_flops = 0;
  int64_t total_params = 0;

  std::string to_csv() const;
  std::string summary() const;
};

// Cost of one layer; in_shapes are its input shapes, out its output shape.
LayerCost count_node(const LayerSpec& spec, std::span<const TensorShape> in_shapes, const TensorShape& out,
                     const CostConvention& convention = {});

// Propagates shape errors from inference.
CostReport count_graph(const Graph& graph, const TensorShape& input, const CostConvention& convention = {});

struct StageDelta {
  std::string stage;
  int64_t flops = 0;
  int64_t baseline_flops = 0;
  int64_t params = 0;
  int64_t baseline_params = 0;
};

struct Comparison {
  CostReport graph;
  CostReport baseline;
  double speedup = 1.0;  // baseline FLOPs / graph FLOPs
  std::vector<StageDelta> stages;

  std::string summary() const;
  std::string to_csv() const;
};

// Each graph is analyzed at its own input shape.
Comparison compare(const Graph& graph, const TensorShape& input, const Graph& baseline,
                   const TensorShape& baseline_input);
// Both graphs at the same input shape.
Comparison compare(const Graph& graph, const Graph& baseline, const TensorShape& input);

}  // namespace blnet
