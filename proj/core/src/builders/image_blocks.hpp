#pragma once

#include <array>
#include <string>

#include "blnet/builders.hpp"
#include "blnet/net_builder.hpp"

namespace blnet::detail {

struct BackboneSpec {
  std::array<int, 4> layers;     // baseline blocks per stage
  std::array<int, 3> bl_layers;  // Big-Little stage depth L, including the shared transition
  int64_t card;                  // ResNeXt cardinality, 1 for ResNet
  int64_t bottleneck_width;      // ResNeXt per-group width at the first stage

  int64_t mid(int64_t channels) const {
    return card == 1 ? channels / 4 : card * bottleneck_width * channels / 256;
  }
};

struct BlockShape {
  int64_t out;
  int64_t mid;
  int64_t groups;
};

BackboneSpec backbone_spec(Backbone b);

// 1x1 -> 3x3 (stride, groups) -> 1x1 bottleneck with residual shortcut.
Tap bottleneck(NetBuilder& nb, const std::string& prefix, const Tap& x, const BlockShape& s, int64_t stride,
               bool final_relu);
Tap bottleneck_stage(NetBuilder& nb, const std::string& prefix, Tap x, int blocks, const BlockShape& s,
                     int64_t first_stride, bool last_relu);

BlockShape big_shape(const BackboneSpec& spec, int64_t channels);
BlockShape little_shape(const BackboneSpec& spec, int64_t channels, int64_t alpha);

Tap image_head(NetBuilder& nb, const Tap& x, int64_t classes);

}  // namespace blnet::detail
