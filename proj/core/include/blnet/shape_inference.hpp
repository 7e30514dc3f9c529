#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>

#include "blnet/graph.hpp"
#include "blnet/tensor_shape.hpp"

namespace blnet {

class ShapeMap {
 public:
  void set(const std::string& id, TensorShape shape) { shapes_[id] = shape; }
  const TensorShape& at(std::string_view id) const;
  bool contains(std::string_view id) const { return shapes_.contains(std::string(id)); }
  std::size_t size() const { return shapes_.size(); }

 private:
  std::unordered_map<std::string, TensorShape> shapes_;
};

// Standard convolution/pooling extent: floor((in + 2*pad - kernel) / stride) + 1.
// May return a non-positive value; callers decide whether that is an error.
int64_t conv_out_extent(int64_t in, int64_t kernel, int64_t stride, int64_t pad);

// Output shape of one layer given its input shapes. Throws ShapeMismatch or
// NonPositiveExtent tagged with node_id.
TensorShape infer_output_shape(const LayerSpec& spec, std::span<const TensorShape> inputs,
                               std::string_view node_id);

// Annotates every node for the given external input shape.
ShapeMap infer_shapes(const Graph& graph, const TensorShape& input);

// Parses the "input_shape" metadata entry ("N,C,H,W"), if present.
std::optional<TensorShape> declared_input_shape(const Graph& graph);

}  // namespace blnet
