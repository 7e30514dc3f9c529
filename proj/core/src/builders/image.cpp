#include <array>
#include <cmath>

#include "blnet/builders.hpp"
#include "blnet/error.hpp"
#include "blnet/net_builder.hpp"
#include "image_blocks.hpp"

namespace blnet {

namespace detail {

BackboneSpec backbone_spec(Backbone b) {
  switch (b) {
    case Backbone::ResNet50: return {{3, 4, 6, 3}, {3, 4, 6}, 1, 0};
    case Backbone::ResNet101: return {{3, 4, 23, 3}, {4, 8, 18}, 1, 0};
    case Backbone::ResNet152: return {{3, 8, 36, 3}, {5, 12, 30}, 1, 0};
    case Backbone::ResNeXt50_32x4d: return {{3, 4, 6, 3}, {3, 4, 6}, 32, 4};
    case Backbone::ResNeXt101_32x4d: return {{3, 4, 23, 3}, {4, 8, 18}, 32, 4};
    case Backbone::ResNeXt101_64x4d: return {{3, 4, 23, 3}, {4, 8, 18}, 64, 4};
    case Backbone::SpeechResNet22: break;
  }
  throw Error(ErrorKind::UnknownBackbone, std::string(backbone_name(b)) + " is not an image backbone");
}

Tap bottleneck(NetBuilder& nb, const std::string& prefix, const Tap& x, const BlockShape& s, int64_t stride,
               bool final_relu) {
  Tap y = nb.conv_bn(prefix + ".conv1", x, s.mid, 1, 1, 1, true);
  y = nb.conv_bn(prefix + ".conv2", y, s.mid, 3, stride, s.groups, true);
  y = nb.conv_bn(prefix + ".conv3", y, s.out, 1);

  // Projection only where the channel count changes; a stride-only change
  // subsamples through a parameter-free 1x1 max-pool.
  Tap shortcut = x;
  if (x.channels() != s.out) {
    shortcut = nb.conv_bn(prefix + ".proj", x, s.out, 1, stride);
  } else if (stride != 1) {
    shortcut = nb.add(prefix + ".subsample", MaxPoolParams{1, 1, stride, stride, 0, 0}, {x});
  }
  Tap out = nb.add_merge(prefix + ".add", {y, shortcut}, {1.0, 1.0});
  return final_relu ? nb.relu(prefix + ".relu", out) : out;
}

Tap bottleneck_stage(NetBuilder& nb, const std::string& prefix, Tap x, int blocks, const BlockShape& s,
                     int64_t first_stride, bool last_relu) {
  for (int b = 0; b < blocks; ++b) {
    x = bottleneck(nb, prefix + ".b" + std::to_string(b), x, s, b == 0 ? first_stride : 1,
                   last_relu || b + 1 < blocks);
  }
  return x;
}

BlockShape big_shape(const BackboneSpec& spec, int64_t channels) { return {channels, spec.mid(channels), spec.card}; }

// Little branch: width / alpha, cardinality / alpha, group width unchanged.
BlockShape little_shape(const BackboneSpec& spec, int64_t channels, int64_t alpha) {
  const int64_t card = spec.card == 1 ? 1 : spec.card / alpha;
  if (card < 1 || (spec.card > 1 && spec.card % alpha != 0) || channels % alpha != 0 ||
      spec.mid(channels) % alpha != 0) {
    throw Error(ErrorKind::UnsupportedCombination,
                "alpha " + std::to_string(alpha) + " does not divide the stage width " + std::to_string(channels));
  }
  return {channels / alpha, spec.mid(channels) / alpha, card};
}

Tap image_head(NetBuilder& nb, const Tap& x, int64_t classes) {
  nb.set_stage("head");
  Tap y = nb.add("head.gap", GlobalAvgPoolParams{}, {x});
  return nb.add("head.fc", LinearParams{y.channels(), classes, true}, {y});
}

}  // namespace detail

using namespace detail;

namespace {

constexpr std::array<int64_t, 4> kStageChannels{256, 512, 1024, 2048};

Graph build_resnet(Backbone backbone, const TensorShape& input, bool lowres) {
  const auto spec = backbone_spec(backbone);
  NetBuilder nb(input);
  nb.set_meta("name", std::string(backbone_name(backbone)) + (lowres ? "-lowres" : ""));
  nb.set_meta("family", "baseline");

  nb.set_stage("stem");
  Tap x = nb.conv_bn("stem.conv7", nb.input(), 64, 7, 2, 1, true);
  if (lowres) {
    x = nb.conv_bn("stem.down", x, 64, 3, 2, 1, true);
  } else {
    x = nb.add("stem.pool", MaxPoolParams{3, 3, 2, 2, 1, 1}, {x});
  }

  for (int i = 0; i < 4; ++i) {
    const std::string name = "stage" + std::to_string(i + 1);
    nb.set_stage(name);
    const int64_t stride = (i > 0 || lowres) ? 2 : 1;
    x = bottleneck_stage(nb, name, x, spec.layers[i], big_shape(spec, kStageChannels[i]), stride, true);
  }
  Tap out = image_head(nb, x, 1000);
  return std::move(nb).finish({out});
}

}  // namespace

Graph build_baseline(Backbone backbone, const TensorShape& input) { return build_resnet(backbone, input, false); }

Graph build_lowres(Backbone backbone, const TensorShape& input) { return build_resnet(backbone, input, true); }

int little_branch_depth(int L, int beta) {
  if (L < 1 || beta < 1) throw Error(ErrorKind::InvalidArgument, "little_branch_depth needs L >= 1 and beta >= 1");
  const int ceil_div = (L + beta - 1) / beta;
  return std::max(ceil_div - 1, 1);
}

void check_config(const BLConfig& c) {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::InvalidArgument, m); };
  if (c.K < 1) fail("K must be >= 1");
  if (c.alpha < 1) fail("alpha must be >= 1");
  if (c.beta < 1) fail("beta must be >= 1");
  if (static_cast<int>(c.coefficients.size()) != c.K) {
    fail("coefficient count " + std::to_string(c.coefficients.size()) + " does not match K = " + std::to_string(c.K));
  }
  if (is_image_backbone(c.backbone) && c.num_merges != 1 && c.num_merges != 2 && c.num_merges != 4 &&
      c.num_merges != 7) {
    fail("merge count must be one of 1, 2, 4, 7");
  }
  if (!c.input_resolution.positive()) fail("input resolution must be positive");
}

StagePlan plan_stages(const BLConfig& config) {
  check_config(config);
  const auto spec = backbone_spec(config.backbone);
  std::array<int, 3> little{};
  for (int i = 0; i < 3; ++i) little[i] = little_branch_depth(spec.bl_layers[i], config.beta);

  // Table counts for the deep presets at beta = 4, where they differ from the formula.
  if (config.beta == 4) {
    if (spec.bl_layers[2] == 18) little = {1, 1, 3};
    if (spec.bl_layers[2] == 30) little = {1, 2, 6};
  }
  if (config.little_blocks_override) little = *config.little_blocks_override;

  StagePlan plan;
  for (int i = 0; i < 3; ++i) {
    StageSpec s;
    s.big_blocks = spec.bl_layers[i] - 1;
    s.little_blocks = little[i];
    s.big_channels = kStageChannels[i];
    s.little_channels = kStageChannels[i] / config.alpha;
    s.fusion_stride = i < 2 ? 2 : 1;
    plan.stages.push_back(s);
  }
  plan.tail_blocks = spec.layers[3];
  plan.tail_channels = kStageChannels[3];

  switch (config.num_merges) {
    case 4:
      break;
    case 2:
      plan.stem_merge = false;
      plan.stages[0].merge_at_end = false;
      break;
    case 1:
      plan.stem_merge = false;
      plan.stages[0].merge_at_end = false;
      plan.stages[1].merge_at_end = false;
      break;
    case 7: {
      // The third stage becomes four consecutive modules, each with its own
      // merge and fusion block; big and little blocks are spread over them.
      const StageSpec s3 = plan.stages[2];
      const int big_total = s3.big_blocks + 1 - 4;
      if (big_total < 4) {
        throw Error(ErrorKind::UnsupportedCombination, "seven merges need a deeper third stage");
      }
      plan.stages.pop_back();
      for (int j = 0; j < 4; ++j) {
        StageSpec sub = s3;
        sub.big_blocks = big_total / 4 + (j < big_total % 4 ? 1 : 0);
        sub.little_blocks = std::max(1, s3.little_blocks / 4 + (j < s3.little_blocks % 4 ? 1 : 0));
        sub.fusion_stride = 1;
        plan.stages.push_back(sub);
      }
      break;
    }
    default:
      throw Error(ErrorKind::UnsupportedCombination, "unsupported merge count");
  }
  for (const auto& s : plan.stages) {
    if (s.little_blocks < 1) throw Error(ErrorKind::InvalidArgument, "little branch needs at least one block");
  }
  return plan;
}

Graph build_bl_image(const BLConfig& config) {
  if (!is_image_backbone(config.backbone)) {
    throw Error(ErrorKind::UnknownBackbone, std::string(backbone_name(config.backbone)) + " is not an image backbone");
  }
  if (config.K == 3) return build_bl_k3(config);
  if (config.K == 1) return build_baseline(config.backbone, config.input_resolution);
  if (config.K != 2) throw Error(ErrorKind::UnsupportedCombination, "image networks support K = 1, 2 or 3");

  const StagePlan plan = plan_stages(config);
  const auto spec = backbone_spec(config.backbone);
  const bool concat = config.merge_mode == MergeMode::Concatenation;
  if (concat && config.num_merges != 4) {
    throw Error(ErrorKind::UnsupportedCombination, "concatenation merge requires m = 4");
  }
  const int64_t alpha = config.alpha;

  NetBuilder nb(config.input_resolution);
  nb.set_meta("name", "bl-" + std::string(backbone_name(config.backbone)));
  nb.set_meta("family", "bl-image");
  nb.set_meta("alpha", std::to_string(config.alpha));
  nb.set_meta("beta", std::to_string(config.beta));
  nb.set_meta("merges", std::to_string(config.num_merges));
  nb.set_meta("merge_mode", std::string(merge_mode_name(config.merge_mode)));

  nb.set_stage("stem");
  Tap x = nb.conv_bn("stem.conv7", nb.input(), 64, 7, 2, 1, true);

  // First module replaces the max-pool.
  const int64_t stem_little = 64 / alpha;
  const int64_t stem_big = concat ? 64 - stem_little : 64;
  Tap big = nb.conv_bn("stem.big", x, stem_big, 3, 2, 1, !plan.stem_merge);
  Tap little = nb.conv_bn("stem.little.0", x, stem_little, 3, 1, 1, true);
  little = nb.conv_bn("stem.little.1", little, stem_little, 3, 2, 1, true);
  if (plan.stem_merge) {
    ModuleOptions opt{config.merge_mode, config.coefficients, 64, [](NetBuilder& b, const Tap& t) {
                        return b.conv_bn("stem.fuse", t, 64, 1, 1, 1, true);
                      }};
    big = little = build_bl_module(nb, "stem.module", {little, big}, opt);
  }

  int stage_index = 0;
  int sub_index = 0;
  for (std::size_t i = 0; i < plan.stages.size(); ++i) {
    const StageSpec& s = plan.stages[i];
    const bool split = plan.stages.size() > 3 && i >= 2;
    if (!split || sub_index == 0) ++stage_index;
    const std::string stage = "stage" + std::to_string(stage_index);
    const std::string prefix = split ? stage + ".m" + std::to_string(sub_index++) : stage;
    nb.set_stage(stage);

    BlockShape bshape = big_shape(spec, s.big_channels);
    if (concat) {
      bshape.out = s.big_channels - s.little_channels;
      bshape.mid = bshape.mid * (alpha - 1) / alpha;
    }
    const BlockShape lshape = little_shape(spec, s.big_channels, alpha);
    const int64_t little_stride = little.height() != big.height() ? 2 : 1;

    Tap b = bottleneck_stage(nb, prefix + ".big", big, s.big_blocks, bshape, 2, false);
    Tap l = bottleneck_stage(nb, prefix + ".little", little, s.little_blocks, lshape, little_stride, true);

    const BlockShape fshape = big_shape(spec, s.big_channels);
    if (s.merge_at_end) {
      ModuleOptions opt{config.merge_mode, config.coefficients, s.big_channels,
                        [&, stride = s.fusion_stride](NetBuilder& nb2, const Tap& t) {
                          return bottleneck(nb2, prefix + ".fuse", t, fshape, stride, true);
                        }};
      big = little = build_bl_module(nb, prefix + ".module", {l, b}, opt);
    } else {
      b = nb.relu(prefix + ".big.relu", b);
      big = bottleneck(nb, prefix + ".fuse", b, fshape, 1, true);
      little = l;
    }
  }

  nb.set_stage("stage4");
  x = bottleneck_stage(nb, "stage4", big, plan.tail_blocks, big_shape(spec, plan.tail_channels), 2, true);
  Tap out = image_head(nb, x, 1000);
  return std::move(nb).finish({out});
}

Graph build_bl_k3(const BLConfig& config) {
  if (config.backbone != Backbone::ResNet50 || config.K != 3) {
    throw Error(ErrorKind::UnsupportedCombination, "K = 3 is defined for the resnet50 backbone only");
  }
  if (config.merge_mode != MergeMode::Addition || config.num_merges != 4) {
    throw Error(ErrorKind::UnsupportedCombination, "K = 3 supports addition with m = 4 only");
  }
  check_config(config);
  const auto spec = backbone_spec(config.backbone);
  const int64_t a1 = config.alpha, a2 = int64_t{config.alpha} * config.alpha;

  NetBuilder nb(config.input_resolution);
  nb.set_meta("name", "bl-resnet50-k3");
  nb.set_meta("family", "bl-image");
  nb.set_meta("alpha", std::to_string(config.alpha));
  nb.set_meta("beta", std::to_string(config.beta));
  nb.set_meta("K", "3");

  // Scales 1/4, 1/2 and 1 of the fused grid, which sits one octave above the
  // K = 2 network so the big branch still runs at 1/4 of the stem output.
  nb.set_stage("stem");
  Tap x = nb.conv_bn("stem.conv7", nb.input(), 64, 7, 2, 1, true);
  Tap big = nb.conv_bn("stem.big", x, 64, 3, 2);
  Tap mid = nb.conv_bn("stem.mid", x, 64 / a1, 3, 1, 1, true);
  Tap little = nb.conv_bn("stem.little", x, 64 / a2, 3, 1, 1, true);
  ModuleOptions stem_opt{MergeMode::Addition, config.coefficients, 64, [](NetBuilder& b, const Tap& t) {
                           return b.conv_bn("stem.fuse", t, 64, 1, 1, 1, true);
                         }};
  x = build_bl_module(nb, "stem.module", {little, mid, big}, stem_opt);

  for (int i = 0; i < 3; ++i) {
    const std::string stage = "stage" + std::to_string(i + 1);
    nb.set_stage(stage);
    const int64_t c = kStageChannels[i];
    const int L = spec.bl_layers[i];
    const int depth = config.little_blocks_override ? (*config.little_blocks_override)[i]
                                                    : little_branch_depth(L, config.beta);
    const BlockShape bshape = big_shape(spec, c);

    Tap b = bottleneck(nb, stage + ".big.b0", x, bshape, 2, L - 1 > 1);
    b = bottleneck_stage(nb, stage + ".big.rest", b, L - 2, bshape, 2, false);
    Tap m = bottleneck_stage(nb, stage + ".mid", x, depth, little_shape(spec, c, a1), 2, true);
    Tap l = bottleneck_stage(nb, stage + ".little", x, depth, little_shape(spec, c, a2), 1, true);

    ModuleOptions opt{MergeMode::Addition, config.coefficients, c, [&](NetBuilder& nb2, const Tap& t) {
                        return bottleneck(nb2, stage + ".fuse", t, bshape, 2, true);
                      }};
    x = build_bl_module(nb, stage + ".module", {l, m, b}, opt);
  }

  nb.set_stage("stage4");
  x = bottleneck_stage(nb, "stage4", x, spec.layers[3], big_shape(spec, kStageChannels[3]), 2, true);
  Tap out = image_head(nb, x, 1000);
  return std::move(nb).finish({out});
}

}  // namespace blnet
