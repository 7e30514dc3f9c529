#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace blnet {

enum class LayerKind {
  Input,
  Conv2d,
  BatchNorm,
  ReLU,
  MaxPool,
  GlobalAvgPool,
  BilinearUpsample,
  AddMerge,
  ConcatMerge,
  CropTime,
  Linear,
};

struct InputParams {
  int64_t channels = 0;
  bool operator==(const InputParams&) const = default;
};

struct Conv2dParams {
  int64_t in_channels = 0;
  int64_t out_channels = 0;
  int64_t kernel_h = 1;
  int64_t kernel_w = 1;
  int64_t stride_h = 1;
  int64_t stride_w = 1;
  int64_t pad_h = 0;
  int64_t pad_w = 0;
  int64_t groups = 1;
  bool has_bias = false;
  bool operator==(const Conv2dParams&) const = default;
};

struct BatchNormParams {
  int64_t channels = 0;
  bool operator==(const BatchNormParams&) const = default;
};

struct ReluParams {
  bool operator==(const ReluParams&) const = default;
};

struct MaxPoolParams {
  int64_t kernel_h = 1;
  int64_t kernel_w = 1;
  int64_t stride_h = 1;
  int64_t stride_w = 1;
  int64_t pad_h = 0;
  int64_t pad_w = 0;
  bool operator==(const MaxPoolParams&) const = default;
};

struct GlobalAvgPoolParams {
  bool operator==(const GlobalAvgPoolParams&) const = default;
};

struct UpsampleParams {
  int64_t scale_h = 1;
  int64_t scale_w = 1;
  bool operator==(const UpsampleParams&) const = default;
};

// Weighted sum: out = sum_k coefficients[k] * input_k.
struct AddMergeParams {
  int64_t arity = 2;
  std::vector<double> coefficients{1.0, 1.0};
  bool operator==(const AddMergeParams&) const = default;
};

struct ConcatMergeParams {
  int64_t arity = 2;
  bool operator==(const ConcatMergeParams&) const = default;
};

// Removes columns from the start and end of the width (time) axis.
struct CropTimeParams {
  int64_t trim_front = 0;
  int64_t trim_back = 0;
  int64_t total() const { return trim_front + trim_back; }
  bool operator==(const CropTimeParams&) const = default;
};

// Flattens (C, H, W) per sample; output shape is (N, out_features, 1, 1).
struct LinearParams {
  int64_t in_features = 0;
  int64_t out_features = 0;
  bool has_bias = true;
  bool operator==(const LinearParams&) const = default;
};

using LayerSpec = std::variant<InputParams, Conv2dParams, BatchNormParams, ReluParams, MaxPoolParams,
                               GlobalAvgPoolParams, UpsampleParams, AddMergeParams, ConcatMergeParams,
                               CropTimeParams, LinearParams>;

LayerKind kind_of(const LayerSpec& spec);
std::string_view kind_name(LayerKind kind);
std::optional<LayerKind> kind_from_name(std::string_view name);

// Number of predecessors the spec expects (0 for Input).
int64_t expected_arity(const LayerSpec& spec);

bool has_weights(LayerKind kind);

}  // namespace blnet
