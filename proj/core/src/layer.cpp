#include "blnet/layer.hpp"

#include <array>
#include <utility>

#include "blnet/tensor_shape.hpp"

namespace blnet {

std::string TensorShape::to_string() const {
  return std::to_string(batch) + "x" + std::to_string(channels) + "x" + std::to_string(height) + "x" +
         std::to_string(width);
}

namespace {

constexpr std::array<std::pair<LayerKind, std::string_view>, 11> kKindNames{{
    {LayerKind::Input, "Input"},
    {LayerKind::Conv2d, "Conv2d"},
    {LayerKind::BatchNorm, "BatchNorm"},
    {LayerKind::ReLU, "ReLU"},
    {LayerKind::MaxPool, "MaxPool"},
    {LayerKind::GlobalAvgPool, "GlobalAvgPool"},
    {LayerKind::BilinearUpsample, "BilinearUpsample"},
    {LayerKind::AddMerge, "AddMerge"},
    {LayerKind::ConcatMerge, "ConcatMerge"},
    {LayerKind::CropTime, "CropTime"},
    {LayerKind::Linear, "Linear"},
}};

}  // namespace

LayerKind kind_of(const LayerSpec& spec) {
  // Variant alternatives are declared in LayerKind order.
  return static_cast<LayerKind>(spec.index());
}

std::string_view kind_name(LayerKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "?";
}

std::optional<LayerKind> kind_from_name(std::string_view name) {
  for (const auto& [k, n] : kKindNames) {
    if (n == name) return k;
  }
  return std::nullopt;
}

int64_t expected_arity(const LayerSpec& spec) {
  if (const auto* add = std::get_if<AddMergeParams>(&spec)) return add->arity;
  if (const auto* cat = std::get_if<ConcatMergeParams>(&spec)) return cat->arity;
  if (std::holds_alternative<InputParams>(spec)) return 0;
  return 1;
}

bool has_weights(LayerKind kind) {
  return kind == LayerKind::Conv2d || kind == LayerKind::BatchNorm || kind == LayerKind::Linear;
}

}  // namespace blnet
