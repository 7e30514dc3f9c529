#include "blnet/builders.hpp"
#include "blnet/error.hpp"
#include "blnet/net_builder.hpp"
#include "speech_blocks.hpp"

namespace blnet {

namespace {

// Two 3x3 convs with a residual shortcut; projection on width or stride change.
Tap basic_block(NetBuilder& nb, const std::string& prefix, const Tap& x, int64_t out, int64_t stride,
                int64_t groups, bool final_relu = true) {
  if (x.channels() % groups != 0 || out % groups != 0) groups = 1;
  Tap y = nb.conv_bn(prefix + ".conv1", x, out, 3, stride, groups, true);
  y = nb.conv_bn(prefix + ".conv2", y, out, 3, 1, groups);
  Tap shortcut = x;
  if (x.channels() != out || stride != 1) shortcut = nb.conv_bn(prefix + ".proj", x, out, 1, stride);
  Tap sum = nb.add_merge(prefix + ".add", {y, shortcut}, {1.0, 1.0});
  return final_relu ? nb.relu(prefix + ".relu", sum) : sum;
}

Tap basic_stage(NetBuilder& nb, const std::string& prefix, Tap x, int blocks, int64_t out, int64_t stride,
                int64_t groups, bool last_relu) {
  for (int b = 0; b < blocks; ++b) {
    x = basic_block(nb, prefix + ".b" + std::to_string(b), x, out, b == 0 ? stride : 1, groups,
                    last_relu || b + 1 < blocks);
  }
  return x;
}

void check_micro(const MicroConfig& c) {
  if (c.K < 2 || c.K > 3) throw Error(ErrorKind::UnsupportedCombination, "micro graphs use K = 2 or 3");
  if (c.alpha < 1 || c.beta < 1) throw Error(ErrorKind::InvalidArgument, "alpha and beta must be >= 1");
  if (c.merge_mode == MergeMode::Addition && static_cast<int>(c.coefficients.size()) != c.K) {
    throw Error(ErrorKind::InvalidArgument, "coefficient count does not match K");
  }
}

Tap linear_head(NetBuilder& nb, const Tap& x, int64_t classes) {
  nb.set_stage("head");
  Tap y = nb.add("head.gap", GlobalAvgPoolParams{}, {x});
  return nb.add("head.fc", LinearParams{y.channels(), classes, true}, {y});
}

}  // namespace

Graph build_micro_bl(const MicroConfig& c) {
  check_micro(c);
  if (c.K != 2) throw Error(ErrorKind::UnsupportedCombination, "the micro network is a K = 2 model");
  const bool concat = c.merge_mode == MergeMode::Concatenation;
  NetBuilder nb(c.input);
  nb.set_meta("name", "micro-bl");
  nb.set_meta("family", "micro");

  nb.set_stage("stem");
  Tap x = nb.conv_bn("stem", nb.input(), c.width, 3, 1, 1, true);

  // Each stage: L = 3 (two big blocks plus the shared fusion block).
  constexpr int L = 3;
  const int little_blocks = little_branch_depth(L, c.beta);
  for (int s = 0; s < 2; ++s) {
    const std::string stage = "stage" + std::to_string(s + 1);
    nb.set_stage(stage);
    const int64_t ch = c.width * (int64_t{2} << s);
    const int64_t lch = ch / c.alpha;
    Tap big = basic_stage(nb, stage + ".big", x, L - 1, concat ? ch - lch : ch, 2, c.groups, false);
    Tap little = basic_stage(nb, stage + ".little", x, little_blocks, lch, 1, std::max<int64_t>(1, c.groups / c.alpha),
                             true);
    ModuleOptions opt{c.merge_mode, c.coefficients, ch, [&](NetBuilder& b, const Tap& t) {
                        return basic_block(b, stage + ".fuse", t, ch, 2, c.groups);
                      }};
    x = build_bl_module(nb, stage + ".module", {little, big}, opt);
  }
  Tap out = linear_head(nb, x, c.classes);
  return std::move(nb).finish({out});
}

Graph build_micro_module(const MicroConfig& c) {
  check_micro(c);
  NetBuilder nb(c.input);
  nb.set_meta("name", c.K == 3 ? "micro-module-k3" : "micro-module");
  nb.set_meta("family", "micro");
  nb.set_stage("module");

  const int64_t ch = c.width;
  const int64_t alpha = c.alpha;
  std::vector<Tap> branches;
  // Finest first: scale 1 at width ch / alpha^(K-1), down to the big branch at ch.
  int64_t width = ch;
  for (int k = 1; k < c.K; ++k) width /= alpha;
  for (int k = 0; k < c.K; ++k) {
    const std::string name = "module.s" + std::to_string(k);
    const int64_t groups = k + 1 == c.K ? c.groups : 1;
    Tap t = nb.input();
    if (k == 0) {
      t = basic_block(nb, name + ".b0", t, width, 1, groups);
    }
    for (int d = 0; d < k; ++d) {
      t = basic_block(nb, name + ".b" + std::to_string(d), t, width, 2, groups, d + 1 < k);
    }
    branches.push_back(t);
    width *= alpha;
  }
  ModuleOptions opt{c.merge_mode, c.coefficients, ch, [&](NetBuilder& b, const Tap& t) {
                      return basic_block(b, "module.fuse", t, ch, 1, c.groups);
                    }};
  Tap x = build_bl_module(nb, "module", branches, opt);
  Tap out = linear_head(nb, x, c.classes);
  return std::move(nb).finish({out});
}

Graph build_micro_speech(const MicroConfig& c) {
  check_micro(c);
  if (c.K != 2) throw Error(ErrorKind::UnsupportedCombination, "the speech micro graph is a K = 2 model");
  NetBuilder nb(c.input);
  nb.set_meta("name", "micro-speech");
  nb.set_meta("family", "micro");

  Tap x = detail::speech_stem(nb, nb.input(), c.width);
  nb.set_stage("module");
  const int64_t ch = c.width;
  // Big: 3 convs at half frequency; little: 2 convs, so its time extent is cropped.
  Tap big = detail::speech_branch(nb, "module.big", x, ch, {2, 1}, 2, false);
  Tap little = detail::speech_branch(nb, "module.little", x, ch / c.alpha, {2}, 1, true);
  ModuleOptions opt{c.merge_mode, c.coefficients, ch, [&](NetBuilder& b, const Tap& t) {
                      return detail::speech_block(b, "module.transition", t, ch, 1, 2, true);
                    }, true};
  x = build_bl_module(nb, "module", {little, big}, opt);
  Tap out = linear_head(nb, x, c.classes);
  return std::move(nb).finish({out});
}

}  // namespace blnet
