#include "blnet/shape_inference.hpp"

#include <charconv>
#include <string>

#include "blnet/error.hpp"

namespace blnet {

namespace {

[[noreturn]] void mismatch(std::string_view node_id, const std::string& expected, const std::string& got) {
  throw ShapeError(ErrorKind::ShapeMismatch, std::string(node_id), "expected " + expected + ", got " + got);
}

TensorShape checked(TensorShape s, std::string_view node_id) {
  if (!s.positive()) {
    throw ShapeError(ErrorKind::NonPositiveExtent, std::string(node_id), "inferred shape " + s.to_string());
  }
  return s;
}

struct OutputShape {
  std::span<const TensorShape> in;
  std::string_view id;

  const TensorShape& first() const { return in[0]; }

  void expect_channels(int64_t channels) const {
    if (first().channels != channels) {
      mismatch(id, std::to_string(channels) + " input channels", std::to_string(first().channels));
    }
  }

  TensorShape operator()(const InputParams& p) const {
    expect_channels(p.channels);
    return first();
  }

  TensorShape operator()(const Conv2dParams& p) const {
    expect_channels(p.in_channels);
    const auto& s = first();
    return {s.batch, p.out_channels, conv_out_extent(s.height, p.kernel_h, p.stride_h, p.pad_h),
            conv_out_extent(s.width, p.kernel_w, p.stride_w, p.pad_w)};
  }

  TensorShape operator()(const BatchNormParams& p) const {
    expect_channels(p.channels);
    return first();
  }

  TensorShape operator()(const ReluParams&) const { return first(); }

  TensorShape operator()(const MaxPoolParams& p) const {
    const auto& s = first();
    return {s.batch, s.channels, conv_out_extent(s.height, p.kernel_h, p.stride_h, p.pad_h),
            conv_out_extent(s.width, p.kernel_w, p.stride_w, p.pad_w)};
  }

  TensorShape operator()(const GlobalAvgPoolParams&) const { return {first().batch, first().channels, 1, 1}; }

  TensorShape operator()(const UpsampleParams& p) const {
    const auto& s = first();
    return {s.batch, s.channels, s.height * p.scale_h, s.width * p.scale_w};
  }

  TensorShape operator()(const AddMergeParams&) const {
    for (const auto& s : in) {
      if (s != first()) mismatch(id, "merge input " + first().to_string(), s.to_string());
    }
    return first();
  }

  TensorShape operator()(const ConcatMergeParams&) const {
    TensorShape out = first();
    out.channels = 0;
    for (const auto& s : in) {
      if (s.batch != first().batch || s.height != first().height || s.width != first().width) {
        mismatch(id, "concat input matching " + first().to_string() + " off the channel axis", s.to_string());
      }
      out.channels += s.channels;
    }
    return out;
  }

  TensorShape operator()(const CropTimeParams& p) const {
    const auto& s = first();
    if (p.total() >= s.width) {
      throw ShapeError(ErrorKind::NonPositiveExtent, std::string(id),
                       "crop of " + std::to_string(p.total()) + " >= width " + std::to_string(s.width));
    }
    return {s.batch, s.channels, s.height, s.width - p.total()};
  }

  TensorShape operator()(const LinearParams& p) const {
    if (first().per_sample() != p.in_features) {
      mismatch(id, std::to_string(p.in_features) + " input features", std::to_string(first().per_sample()));
    }
    return {first().batch, p.out_features, 1, 1};
  }
};

}  // namespace

const TensorShape& ShapeMap::at(std::string_view id) const {
  auto it = shapes_.find(std::string(id));
  if (it == shapes_.end()) throw Error(ErrorKind::InvalidGraph, "no shape for node '" + std::string(id) + "'");
  return it->second;
}

int64_t conv_out_extent(int64_t in, int64_t kernel, int64_t stride, int64_t pad) {
  const int64_t span = in + 2 * pad - kernel;
  if (span < 0) return 0;
  return span / stride + 1;
}

TensorShape infer_output_shape(const LayerSpec& spec, std::span<const TensorShape> inputs,
                               std::string_view node_id) {
  if (inputs.empty()) {
    throw ShapeError(ErrorKind::ShapeMismatch, std::string(node_id), "no input shapes");
  }
  return checked(std::visit(OutputShape{inputs, node_id}, spec), node_id);
}

ShapeMap infer_shapes(const Graph& graph, const TensorShape& input) {
  if (!input.positive()) throw Error(ErrorKind::NonPositiveExtent, "external input shape " + input.to_string());
  auto order = graph.topological_order();
  if (!order) throw Error(ErrorKind::InvalidGraph, "graph contains a cycle");

  ShapeMap shapes;
  std::vector<TensorShape> in_shapes;
  for (auto idx : *order) {
    const Node& node = graph.nodes()[idx];
    in_shapes.clear();
    if (node.kind() == LayerKind::Input) {
      in_shapes.push_back(input);
    } else {
      for (const auto& p : node.preds) in_shapes.push_back(shapes.at(p));
    }
    shapes.set(node.id, infer_output_shape(node.spec, in_shapes, node.id));
  }
  return shapes;
}

std::optional<TensorShape> declared_input_shape(const Graph& graph) {
  const std::string text = graph.meta("input_shape");
  if (text.empty()) return std::nullopt;
  int64_t v[4];
  const char* p = text.data();
  const char* end = text.data() + text.size();
  for (int i = 0; i < 4; ++i) {
    auto [next, ec] = std::from_chars(p, end, v[i]);
    if (ec != std::errc()) return std::nullopt;
    p = next;
    if (i < 3) {
      if (p == end || *p != ',') return std::nullopt;
      ++p;
    }
  }
  if (p != end) return std::nullopt;
  return TensorShape{v[0], v[1], v[2], v[3]};
}

}  // namespace blnet
