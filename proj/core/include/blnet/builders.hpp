#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "blnet/graph.hpp"
#include "blnet/tensor_shape.hpp"

namespace blnet {

enum class Backbone {
  ResNet50,
  ResNet101,
  ResNet152,
  ResNeXt50_32x4d,
  ResNeXt101_32x4d,
  ResNeXt101_64x4d,
  SpeechResNet22,
};

std::string_view backbone_name(Backbone b);
// Accepts "resnet50", "resnext101_32x4d", "speech_resnet22", ...; throws UnknownBackbone.
Backbone backbone_from_name(std::string_view name);
bool is_image_backbone(Backbone b);

enum class MergeMode { Addition, Concatenation };

std::string_view merge_mode_name(MergeMode m);
std::optional<MergeMode> merge_mode_from_name(std::string_view name);

// The architecture knobs of a Big-Little network.
struct BLConfig {
  int K = 2;
  int alpha = 2;
  int beta = 4;
  MergeMode merge_mode = MergeMode::Addition;
  // Number of cross-branch merges; 4 merges before every feature-map size change.
  int num_merges = 4;
  // c^k per branch, finest resolution first.
  std::vector<double> coefficients{1.0, 1.0};
  Backbone backbone = Backbone::ResNet50;
  TensorShape input_resolution{1, 3, 224, 224};
  // Per-stage little-branch block counts for stages 1..3, replacing the formula.
  std::optional<std::array<int, 3>> little_blocks_override;
};

// Throws InvalidArgument when the record violates its own invariants.
void check_config(const BLConfig& config);

// One branched module of an image network. Block counts exclude the shared
// fusion block F that follows the merge.
struct StageSpec {
  int big_blocks = 0;
  int little_blocks = 0;
  int64_t big_channels = 0;
  int64_t little_channels = 0;
  int fusion_stride = 1;
  bool merge_at_end = true;
};

struct StagePlan {
  bool stem_merge = true;
  std::vector<StageSpec> stages;
  // Unbranched final stage.
  int tail_blocks = 3;
  int64_t tail_channels = 2048;
};

// max(ceil(L / beta) - 1, 1); L counts the big-branch blocks plus the shared transition.
int little_branch_depth(int L, int beta);

// Stage plan of a K=2 image network, including table overrides for named presets.
StagePlan plan_stages(const BLConfig& config);

// Standard ResNet / ResNeXt image classifier.
Graph build_baseline(Backbone backbone, const TensorShape& input = {1, 3, 224, 224});
// Low-resolution variant: max-pool replaced by a strided 3x3 conv and the
// first stage strided as well, so every stage runs at half resolution.
Graph build_lowres(Backbone backbone, const TensorShape& input = {1, 3, 224, 224});

Graph build_bl_image(const BLConfig& config);
Graph build_bl_k3(const BLConfig& config);

enum class SpeechVariant { Baseline22, BL22, BL22Cat, BLPyr22 };

struct SpeechConfig {
  SpeechVariant variant = SpeechVariant::Baseline22;
  int alpha = 4;
  int beta = 1;
  TensorShape input{1, 3, 64, 49};
  int64_t classes = 32000;
};

std::optional<SpeechVariant> speech_variant_from_name(std::string_view name);
Graph build_speech(const SpeechConfig& config);

// Small networks for numerical checks and desk-scale training.
struct MicroConfig {
  int K = 2;
  int alpha = 2;
  int beta = 2;
  MergeMode merge_mode = MergeMode::Addition;
  std::vector<double> coefficients{1.0, 1.0};
  int64_t groups = 1;
  int64_t width = 8;
  int64_t classes = 10;
  TensorShape input{2, 3, 32, 32};
};

// Two branched stages of basic residual blocks, global pooling and a linear head.
Graph build_micro_bl(const MicroConfig& config);
// One Big-Little module (K = 2 or 3) on a small feature map, ending in a linear head.
Graph build_micro_module(const MicroConfig& config);
// Speech-style micro graph: time-unpadded convs, frequency-only strides, CropTime before merging.
Graph build_micro_speech(const MicroConfig& config);

// Overrides applied on top of a registry preset.
struct PresetOverrides {
  std::optional<int> alpha{};
  std::optional<int> beta{};
  std::optional<int> K{};
  std::optional<int> num_merges{};
  std::optional<MergeMode> merge_mode{};
  std::optional<int64_t> height{};
  std::optional<int64_t> width{};
};

struct PresetInfo {
  std::string id;
  std::string description;
  TensorShape input;
  bool big_little = false;
  bool speech = false;
};

const std::vector<PresetInfo>& preset_registry();
const PresetInfo* find_preset(std::string_view id);
// Throws UnknownBackbone for unknown ids.
Graph build_preset(std::string_view id, const PresetOverrides& overrides = {});

// Baseline preset whose cost a preset is compared against ("" if none).
std::string baseline_of(std::string_view id);

}  // namespace blnet
