#include <array>

#include "blnet/builders.hpp"
#include "blnet/error.hpp"
#include "blnet/net_builder.hpp"
#include "speech_blocks.hpp"

namespace blnet {

namespace detail {

Tap speech_block(NetBuilder& nb, const std::string& prefix, const Tap& x, int64_t out, int convs,
                 int64_t freq_stride, bool final_relu) {
  Tap y = x;
  for (int i = 0; i < convs; ++i) {
    // 3x3, frequency padded, time unpadded; stride on frequency only.
    Conv2dParams p{y.channels(), out, 3, 3, i == 0 ? freq_stride : 1, 1, 1, 0, 1, false};
    y = nb.conv_bn_full(prefix + ".conv" + std::to_string(i), y, p, i + 1 < convs);
  }
  Tap shortcut = nb.crop_time(prefix + ".crop", x, y.width());
  if (x.channels() != out || freq_stride != 1) {
    shortcut = nb.conv_bn_full(prefix + ".proj", shortcut,
                               Conv2dParams{x.channels(), out, 1, 1, freq_stride, 1, 0, 0, 1, false}, false);
  }
  Tap sum = nb.add_merge(prefix + ".add", {y, shortcut}, {1.0, 1.0});
  return final_relu ? nb.relu(prefix + ".relu", sum) : sum;
}

Tap speech_branch(NetBuilder& nb, const std::string& prefix, Tap x, int64_t channels,
                  const std::vector<int>& block_convs, int64_t first_stride, bool last_relu) {
  for (std::size_t b = 0; b < block_convs.size(); ++b) {
    x = speech_block(nb, prefix + ".b" + std::to_string(b), x, channels, block_convs[b], b == 0 ? first_stride : 1,
                     last_relu || b + 1 < block_convs.size());
  }
  return x;
}

Tap speech_stem(NetBuilder& nb, const Tap& x, int64_t channels) {
  nb.set_stage("stem");
  return nb.conv_bn_full("stem", x, Conv2dParams{x.channels(), channels, 5, 5, 2, 1, 2, 0, 1, false}, true);
}

}  // namespace detail

using namespace detail;

namespace {

constexpr std::array<int64_t, 4> kSpeechChannels{64, 128, 256, 512};

// Frequency-collapsing projection followed by the state classifier.
Tap speech_head(NetBuilder& nb, const Tap& x, int64_t classes) {
  nb.set_stage("head");
  Tap y = nb.conv_bn_full("head.proj", x, Conv2dParams{x.channels(), 512, x.height(), 1, 1, 1, 0, 0, 1, false}, true);
  return nb.conv("head.classifier", y, classes, 1, 1, 1, 1, 0, 0, 1, true);
}

Graph finish_speech(NetBuilder&& nb, const Tap& x, int64_t classes) {
  Tap out = speech_head(nb, x, classes);
  // The classifier's parameters are not part of the reported model size.
  nb.set_meta("exclude_params", "head.classifier");
  return std::move(nb).finish({out});
}

std::vector<int> little_convs(int beta, bool last_stage) {
  if (last_stage) {
    if (beta == 1) return {2, 2};
    return {2};
  }
  switch (beta) {
    case 1: return {2, 2, 1};
    case 2: return {2, 1};
    case 3: return {2};
    default: break;
  }
  throw Error(ErrorKind::UnsupportedCombination, "speech little branch is defined for beta in {1, 2, 3}");
}

Graph baseline22(const SpeechConfig& cfg) {
  NetBuilder nb(cfg.input);
  nb.set_meta("name", "speech-resnet22");
  nb.set_meta("family", "speech");
  Tap x = speech_stem(nb, nb.input(), 64);
  constexpr std::array<int, 4> blocks{3, 3, 3, 2};
  for (int s = 0; s < 4; ++s) {
    const std::string stage = "stage" + std::to_string(s + 1);
    nb.set_stage(stage);
    x = speech_branch(nb, stage, x, kSpeechChannels[s], std::vector<int>(blocks[s], 2), s == 0 ? 1 : 2, true);
  }
  return finish_speech(std::move(nb), x, cfg.classes);
}

Tap transition(NetBuilder& nb, const std::string& stage, const Tap& t, int64_t channels) {
  return speech_block(nb, stage + ".transition", t, channels, 1, 2, true);
}

Graph bl22(const SpeechConfig& cfg, MergeMode mode) {
  if (cfg.alpha < 1 || 64 % cfg.alpha != 0) {
    throw Error(ErrorKind::UnsupportedCombination, "alpha must divide 64");
  }
  NetBuilder nb(cfg.input);
  nb.set_meta("name", mode == MergeMode::Addition ? "speech-bl22" : "speech-bl22-cat");
  nb.set_meta("family", "speech");
  nb.set_meta("alpha", std::to_string(cfg.alpha));
  nb.set_meta("beta", std::to_string(cfg.beta));
  nb.set_meta("merge_mode", std::string(merge_mode_name(mode)));

  // With alpha = 2, beta = 3 the last stage is left unbranched.
  const bool branch_last = !(cfg.alpha == 2 && cfg.beta == 3);
  Tap x = speech_stem(nb, nb.input(), 64);
  for (int s = 0; s < 4; ++s) {
    const bool last = s == 3;
    const int64_t c = kSpeechChannels[s];
    const std::string stage = "stage" + std::to_string(s + 1);
    nb.set_stage(stage);
    if (last && !branch_last) {
      x = speech_branch(nb, stage, x, c, {2, 2}, 1, true);
      break;
    }
    Tap big = speech_branch(nb, stage + ".big", x, c, last ? std::vector<int>{2, 2} : std::vector<int>{2, 2, 1}, 2,
                            false);
    Tap little = speech_branch(nb, stage + ".little", x, c / cfg.alpha, little_convs(cfg.beta, last), 1, true);
    ModuleOptions opt{mode, {1.0, 1.0}, c, nullptr, true};
    if (!last) {
      opt.fusion = [&](NetBuilder& b, const Tap& t) { return transition(b, stage, t, c); };
    }
    x = build_bl_module(nb, stage + ".module", {little, big}, opt);
  }
  return finish_speech(std::move(nb), x, cfg.classes);
}

// Multi-scale stage: branch k runs at frequency / 2^k with the given width.
Tap pyramid_stage(NetBuilder& nb, const std::string& stage, const Tap& x, const std::vector<int64_t>& widths,
                  int64_t target, const std::function<Tap(NetBuilder&, const Tap&)>& fusion) {
  std::vector<Tap> branches;
  for (std::size_t k = 0; k < widths.size(); ++k) {
    branches.push_back(speech_branch(nb, stage + ".s" + std::to_string(k), x, widths[k], {2, 2, 1},
                                     int64_t{1} << k, k == 0));
  }
  ModuleOptions opt{MergeMode::Addition, std::vector<double>(widths.size(), 1.0), target, fusion, true};
  return build_bl_module(nb, stage + ".module", branches, opt);
}

Graph pyr22(const SpeechConfig& cfg) {
  if (cfg.alpha != 4 || cfg.beta != 1) {
    throw Error(ErrorKind::UnsupportedCombination, "the pyramidal variant is defined for alpha = 4, beta = 1");
  }
  NetBuilder nb(cfg.input);
  nb.set_meta("name", "speech-bl-pyr22");
  nb.set_meta("family", "speech");
  Tap x = speech_stem(nb, nb.input(), 64);

  nb.set_stage("stage1");
  x = pyramid_stage(nb, "stage1", x, {4, 16, 64, 256}, 256,
                    [](NetBuilder& b, const Tap& t) { return transition(b, "stage1", t, 64); });
  nb.set_stage("stage2");
  x = pyramid_stage(nb, "stage2", x, {8, 32, 128}, 128,
                    [](NetBuilder& b, const Tap& t) { return transition(b, "stage2", t, 128); });
  nb.set_stage("stage3");
  x = pyramid_stage(nb, "stage3", x, {64, 256}, 256,
                    [](NetBuilder& b, const Tap& t) { return transition(b, "stage3", t, 256); });
  nb.set_stage("stage4");
  x = speech_branch(nb, "stage4", x, 512, {2, 2}, 1, true);
  return finish_speech(std::move(nb), x, cfg.classes);
}

}  // namespace

std::optional<SpeechVariant> speech_variant_from_name(std::string_view name) {
  if (name == "baseline22") return SpeechVariant::Baseline22;
  if (name == "bl22") return SpeechVariant::BL22;
  if (name == "bl22_cat") return SpeechVariant::BL22Cat;
  if (name == "bl_pyr22") return SpeechVariant::BLPyr22;
  return std::nullopt;
}

Graph build_speech(const SpeechConfig& cfg) {
  switch (cfg.variant) {
    case SpeechVariant::Baseline22: return baseline22(cfg);
    case SpeechVariant::BL22: return bl22(cfg, MergeMode::Addition);
    case SpeechVariant::BL22Cat: return bl22(cfg, MergeMode::Concatenation);
    case SpeechVariant::BLPyr22: return pyr22(cfg);
  }
  throw Error(ErrorKind::UnknownVariant, "unknown speech variant");
}

}  // namespace blnet
