#pragma once

#include <string>
#include <vector>

#include "blnet/graph.hpp"
#include "blnet/tensor_shape.hpp"

namespace blnet {

// A node id together with its inferred output shape.
struct Tap {
  std::string id;
  TensorShape shape;

  int64_t channels() const { return shape.channels; }
  int64_t height() const { return shape.height; }
  int64_t width() const { return shape.width; }
};

// GraphBuilder wrapper that infers shapes as nodes are added, so builders can
// size adapters and upsamplers from the actual tensors they connect.
class NetBuilder {
 public:
  explicit NetBuilder(TensorShape input);

  Tap input() const { return input_; }
  void set_stage(std::string stage) { graph_.set_stage(std::move(stage)); }
  void set_meta(const std::string& key, std::string value) { graph_.set_meta(key, std::move(value)); }

  Tap add(const std::string& id, LayerSpec spec, const std::vector<Tap>& preds);

  Tap conv(const std::string& id, const Tap& x, int64_t out, int64_t kh, int64_t kw, int64_t sh, int64_t sw,
           int64_t ph, int64_t pw, int64_t groups = 1, bool bias = false);
  // Square kernel with "same" padding (k/2).
  Tap conv(const std::string& id, const Tap& x, int64_t out, int64_t k, int64_t stride = 1, int64_t groups = 1);
  Tap bn(const std::string& id, const Tap& x);
  Tap relu(const std::string& id, const Tap& x);

  // conv -> bn, optionally -> relu; ids are prefix.conv / prefix.bn / prefix.relu.
  Tap conv_bn(const std::string& prefix, const Tap& x, int64_t out, int64_t k, int64_t stride = 1,
              int64_t groups = 1, bool with_relu = false);
  Tap conv_bn_full(const std::string& prefix, const Tap& x, const Conv2dParams& p, bool with_relu);

  Tap upsample(const std::string& id, const Tap& x, int64_t sh, int64_t sw);
  Tap add_merge(const std::string& id, const std::vector<Tap>& xs, std::vector<double> coefficients);
  Tap concat(const std::string& id, const std::vector<Tap>& xs);
  Tap crop_time(const std::string& id, const Tap& x, int64_t target_width);

  Graph finish(const std::vector<Tap>& outputs) &&;

 private:
  GraphBuilder graph_;
  Tap input_;
};

}  // namespace blnet

#include <functional>

namespace blnet {

enum class MergeMode;

// Merge options for one Big-Little module.
struct ModuleOptions {
  MergeMode merge_mode;
  std::vector<double> coefficients;
  // Channel count after merging (and after the post-concat reduction).
  int64_t target_channels = 0;
  // Fusion block F applied to the merged tensor; identity when empty.
  std::function<Tap(NetBuilder&, const Tap&)> fusion;
  // Speech modules crop longer time extents instead of upsampling along time.
  bool crop_time = false;
};

// Reconciles branch outputs and merges them: coarser branches are bilinearly
// upsampled to the finest branch's grid; under addition, every branch but the
// coarsest gets a 1x1 conv + BN adapter; with crop_time, longer time extents are cropped
// to the shortest and upsampling acts on frequency only.
// Addition emits AddMerge with the coefficients, then ReLU and F; concatenation
// emits ConcatMerge, a 1x1 conv + BN to target_channels, ReLU and F.
// Throws ShapeIrreconcilable when the grids are not integer multiples.
Tap build_bl_module(NetBuilder& nb, const std::string& prefix, const std::vector<Tap>& branches,
                    const ModuleOptions& options);

}  // namespace blnet
