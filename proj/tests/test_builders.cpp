#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "doctest.h"

#include "blnet/builders.hpp"
#include "blnet/error.hpp"
#include "blnet/shape_inference.hpp"
#include "blnet/validate.hpp"

using namespace blnet;

namespace {

bool starts_with(std::string_view s, std::string_view prefix) { return s.substr(0, prefix.size()) == prefix; }
bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}
bool contains(std::string_view s, std::string_view part) { return s.find(part) != std::string_view::npos; }

const Conv2dParams* as_conv(const Node& n) { return std::get_if<Conv2dParams>(&n.spec); }

// Shape of the last node (in construction order) carrying each stage label.
std::map<std::string, TensorShape> stage_outputs(const Graph& g) {
  const ShapeMap shapes = infer_shapes(g, *declared_input_shape(g));
  std::map<std::string, TensorShape> out;
  for (const auto& n : g.nodes()) out[n.stage] = shapes.at(n.id);
  return out;
}

int count_nodes(const Graph& g, LayerKind kind, std::string_view suffix) {
  return static_cast<int>(std::count_if(g.nodes().begin(), g.nodes().end(), [&](const Node& n) {
    return n.kind() == kind && ends_with(n.id, suffix);
  }));
}

// Largest conv output width among nodes whose id starts with prefix.
int64_t widest_conv(const Graph& g, std::string_view prefix) {
  int64_t widest = 0;
  for (const auto& n : g.nodes()) {
    if (const auto* c = as_conv(n); c && starts_with(n.id, prefix)) widest = std::max(widest, c->out_channels);
  }
  return widest;
}

int count_convs(const Graph& g, std::string_view prefix, bool include_proj = false) {
  int count = 0;
  for (const auto& n : g.nodes()) {
    if (as_conv(n) && starts_with(n.id, prefix) && (include_proj || !contains(n.id, ".proj"))) ++count;
  }
  return count;
}

}  // namespace

TEST_CASE("every preset validates and infers shapes at its declared input") {
  for (const auto& info : preset_registry()) {
    CAPTURE(info.id);
    const Graph g = build_preset(info.id);
    const auto report = validate(g);
    CHECK_MESSAGE(report.ok(), report.to_string());
    const auto declared = declared_input_shape(g);
    REQUIRE(declared.has_value());
    CHECK(*declared == info.input);
    const ShapeMap shapes = infer_shapes(g, *declared);
    for (const auto& n : g.nodes()) CHECK(shapes.at(n.id).positive());
    CHECK_FALSE(g.meta("name").empty());
  }
  CHECK_THROWS_AS(build_preset("resnet18"), Error);
}

TEST_CASE("baseline stage outputs follow the standard ResNet grid") {
  for (const char* id : {"resnet50", "resnet101", "resnet152", "resnext50_32x4d", "resnext101_64x4d"}) {
    CAPTURE(id);
    const Graph g = build_preset(id);
    const ShapeMap shapes = infer_shapes(g, *declared_input_shape(g));
    CHECK(shapes.at("stem.conv7.conv").height == 112);
    const auto outs = stage_outputs(g);
    const int64_t expected[] = {56, 28, 14, 7};
    const int64_t channels[] = {256, 512, 1024, 2048};
    for (int s = 0; s < 4; ++s) {
      const auto& shape = outs.at("stage" + std::to_string(s + 1));
      CHECK(shape.height == expected[s]);
      CHECK(shape.width == expected[s]);
      CHECK(shape.channels == channels[s]);
    }
    CHECK(outs.at("head").channels == 1000);
  }
}

TEST_CASE("ResNeXt presets use grouped 3x3 convs of the stated cardinality") {
  const std::pair<const char*, int64_t> cases[] = {
      {"resnext50_32x4d", 32}, {"resnext101_32x4d", 32}, {"resnext101_64x4d", 64}};
  for (const auto& [id, cardinality] : cases) {
    CAPTURE(id);
    const Graph g = build_preset(id);
    int grouped = 0;
    for (const auto& n : g.nodes()) {
      const auto* c = as_conv(n);
      if (!c || c->kernel_h != 3 || starts_with(n.id, "stem")) continue;
      CHECK(c->groups == cardinality);
      ++grouped;
    }
    CHECK(grouped > 0);
  }
}

TEST_CASE("little_branch_depth follows max(ceil(L / beta) - 1, 1)") {
  CHECK(little_branch_depth(3, 4) == 1);
  CHECK(little_branch_depth(1, 1) == 1);
  CHECK(little_branch_depth(12, 4) == 2);
  for (int L = 1; L <= 40; ++L) {
    for (int beta = 1; beta <= 6; ++beta) {
      const int formula = std::max(static_cast<int>(std::ceil(static_cast<double>(L) / beta)) - 1, 1);
      CHECK(little_branch_depth(L, beta) == formula);
    }
  }
}

TEST_CASE("stage plans of the named presets follow the published block counts") {
  SUBCASE("bL-ResNet-101") {
    BLConfig c;
    c.backbone = Backbone::ResNet101;
    const StagePlan plan = plan_stages(c);
    REQUIRE(plan.stages.size() == 3);
    const int big[] = {3, 7, 17}, little[] = {1, 1, 3};
    for (int s = 0; s < 3; ++s) {
      CHECK(plan.stages[s].big_blocks == big[s]);
      CHECK(plan.stages[s].little_blocks == little[s]);
    }
    CHECK(plan.tail_blocks == 3);
  }
  SUBCASE("bL-ResNet-152") {
    BLConfig c;
    c.backbone = Backbone::ResNet152;
    const StagePlan plan = plan_stages(c);
    const int big[] = {4, 11, 29}, little[] = {1, 2, 6};
    for (int s = 0; s < 3; ++s) {
      CHECK(plan.stages[s].big_blocks == big[s]);
      CHECK(plan.stages[s].little_blocks == little[s]);
    }
  }
  SUBCASE("little channels are big channels over alpha") {
    for (int alpha : {1, 2, 4}) {
      BLConfig c;
      c.alpha = alpha;
      for (const auto& s : plan_stages(c).stages) {
        CHECK(s.little_channels * alpha == s.big_channels);
        CHECK(s.little_blocks >= 1);
      }
    }
  }
}

TEST_CASE("little-branch convs are alpha times narrower than the big branch") {
  for (int alpha : {2, 4}) {
    for (const char* id : {"bl-resnet50", "bl-resnext50_32x4d"}) {
      CAPTURE(alpha);
      CAPTURE(id);
      const Graph g = build_preset(id, {.alpha = alpha});
      for (int s = 1; s <= 3; ++s) {
        const std::string stage = "stage" + std::to_string(s);
        const int64_t big = widest_conv(g, stage + ".big");
        const int64_t little = widest_conv(g, stage + ".little");
        REQUIRE(big > 0);
        CHECK(little * alpha == big);
        const auto& adapter = *as_conv(g.node(stage + ".module.b0.adapt.conv"));
        CHECK(adapter.in_channels * alpha == adapter.out_channels);
        CHECK(adapter.kernel_h == 1);
      }
    }
  }
  // Grouped little branches keep the per-group width of the big branch.
  const Graph g = build_preset("bl-resnext50_32x4d", {.alpha = 2});
  for (const auto& n : g.nodes()) {
    const auto* c = as_conv(n);
    if (!c || c->kernel_h != 3 || !contains(n.id, ".little.") || starts_with(n.id, "stem")) continue;
    CHECK(c->groups == 16);
  }
}

TEST_CASE("the first module replaces max-pool with a big and a little path") {
  const Graph g = build_preset("bl-resnet50");
  CHECK_FALSE(g.index_of("stem.pool").has_value());
  CHECK(build_preset("resnet50").node("stem.pool").kind() == LayerKind::MaxPool);
  const auto& big = *as_conv(g.node("stem.big.conv"));
  CHECK(big.kernel_h == 3);
  CHECK(big.stride_h == 2);
  CHECK(big.out_channels == 64);
  const auto& l0 = *as_conv(g.node("stem.little.0.conv"));
  const auto& l1 = *as_conv(g.node("stem.little.1.conv"));
  CHECK(l0.out_channels == 32);
  CHECK(l0.stride_h == 1);
  CHECK(l1.out_channels == 32);
  CHECK(l1.stride_h == 2);
  CHECK(as_conv(g.node("stem.module.b0.adapt.conv"))->out_channels == 64);
}

TEST_CASE("merge count equals m") {
  const std::pair<int, int> cases[] = {{1, 1}, {2, 2}, {4, 4}};
  for (const auto& [m, expected] : cases) {
    CAPTURE(m);
    const Graph g = build_preset("bl-resnet50", {.num_merges = m});
    CHECK(count_nodes(g, LayerKind::AddMerge, ".module.merge") == expected);
  }
  const Graph g7 = build_preset("bl-resnet101", {.num_merges = 7});
  CHECK(count_nodes(g7, LayerKind::AddMerge, ".module.merge") == 7);
  const Graph cat = build_preset("bl-resnet50", {.merge_mode = MergeMode::Concatenation});
  CHECK(count_nodes(cat, LayerKind::AddMerge, ".module.merge") == 0);
  CHECK(count_nodes(cat, LayerKind::ConcatMerge, ".module.concat") == 4);
  CHECK_THROWS_AS(build_preset("bl-resnet50", {.num_merges = 3}), Error);
}

TEST_CASE("bL stage outputs sit on the next stage's grid") {
  const auto outs = stage_outputs(build_preset("bl-resnet50"));
  CHECK(outs.at("stem").height == 56);
  CHECK(outs.at("stage1").height == 28);
  CHECK(outs.at("stage2").height == 14);
  CHECK(outs.at("stage3").height == 14);
  CHECK(outs.at("stage4").height == 7);
  CHECK(outs.at("stage4").channels == 2048);
}

TEST_CASE("swapping the merge mode only touches merges, adapters and the big-branch budget") {
  const Graph add = build_preset("bl-resnet50");
  const Graph cat = build_preset("bl-resnet50", {.merge_mode = MergeMode::Concatenation});
  std::map<std::string, const Node*> cat_nodes;
  for (const auto& n : cat.nodes()) cat_nodes[n.id] = &n;

  for (const auto& n : add.nodes()) {
    CAPTURE(n.id);
    // The big-branch budget may turn a projection into a subsampling shortcut.
    if (contains(n.id, ".module.") || contains(n.id, ".big.b0.")) continue;
    const auto it = cat_nodes.find(n.id);
    REQUIRE(it != cat_nodes.end());
    const Node& other = *it->second;
    CHECK(other.kind() == n.kind());
    if (contains(n.id, ".big")) continue;  // channel budget differs
    CHECK(other.spec == n.spec);
    CHECK(other.preds == n.preds);
  }
  for (const auto& n : cat.nodes()) {
    if (contains(n.id, ".module.")) {
      CHECK_FALSE(contains(n.id, ".adapt"));
      CHECK(n.kind() != LayerKind::AddMerge);
      continue;
    }
    if (!contains(n.id, ".big.b0.")) CHECK(add.index_of(n.id).has_value());
  }
  CHECK(cat.node("stage1.module.reduce.conv").kind() == LayerKind::Conv2d);
  CHECK(add.node("stage1.module.b0.adapt.conv").kind() == LayerKind::Conv2d);
}

TEST_CASE("concatenation reduces the stacked channels with a 1x1 conv") {
  MicroConfig mc;
  mc.merge_mode = MergeMode::Concatenation;
  mc.width = 64;
  mc.alpha = 4;
  mc.input = {1, 64, 8, 8};
  const Graph g = build_micro_module(mc);
  const ShapeMap shapes = infer_shapes(g, mc.input);
  CHECK(shapes.at("module.concat").channels == 80);
  const auto& reduce = *as_conv(g.node("module.reduce.conv"));
  CHECK(reduce.in_channels == 80);
  CHECK(reduce.out_channels == 64);
  CHECK(reduce.kernel_h == 1);
}

TEST_CASE("K = 3 networks put the big branch at a quarter of the input scale") {
  const Graph g = build_preset("bl-resnet50", {.K = 3});
  const ShapeMap shapes = infer_shapes(g, {1, 3, 224, 224});
  CHECK(shapes.at("stage1.big.b0.relu").height == 56);
  CHECK(shapes.at("stage1.mid.b0.relu").height == 56);
  CHECK(shapes.at("stage1.little.b0.relu").height == 112);
  CHECK(count_nodes(g, LayerKind::AddMerge, ".module.merge") == 4);
  for (const auto& n : g.nodes()) {
    if (const auto* m = std::get_if<AddMergeParams>(&n.spec); m && ends_with(n.id, ".module.merge")) {
      CHECK(m->arity == 3);
    }
  }
  CHECK_THROWS_AS(build_preset("bl-resnet101", {.K = 3}), Error);
}

TEST_CASE("speech graphs never pad or stride in time") {
  for (const auto& info : preset_registry()) {
    if (!info.speech) continue;
    CAPTURE(info.id);
    const Graph g = build_preset(info.id);
    for (const auto& n : g.nodes()) {
      if (const auto* c = as_conv(n)) {
        CHECK(c->pad_w == 0);
        CHECK(c->stride_w == 1);
      }
    }
  }
}

TEST_CASE("speech time and frequency traces match the published annotations") {
  const std::vector<int64_t> time_notes{49, 45, 35, 33, 23, 21, 11, 9, 1};
  const std::vector<int64_t> freq_notes{64, 32, 16, 8, 4, 1};
  auto push = [](std::vector<int64_t>& v, int64_t x) {
    if (v.back() != x) v.push_back(x);
  };
  auto is_subsequence = [](const std::vector<int64_t>& needle, const std::vector<int64_t>& hay) {
    std::size_t i = 0;
    for (int64_t x : hay) {
      if (i < needle.size() && needle[i] == x) ++i;
    }
    return i == needle.size();
  };
  for (const char* id : {"speech-resnet22", "speech-bl22", "speech-bl22-cat", "speech-bl-pyr22"}) {
    CAPTURE(id);
    const Graph g = build_preset(id);
    const ShapeMap shapes = infer_shapes(g, *declared_input_shape(g));
    // Main path: module outputs, shared transitions and unbranched blocks.
    std::vector<int64_t> time{49}, freq{64};
    // Every main-path conv output, for the baseline whose blocks are finer than the annotations.
    std::vector<int64_t> conv_time{49};
    for (const auto& n : g.nodes()) {
      const bool branch = contains(n.id, ".big.") || contains(n.id, ".little.") || contains(n.id, ".s");
      if (as_conv(n) && !branch && !contains(n.id, ".proj") && !contains(n.id, ".module")) {
        push(conv_time, shapes.at(n.id).width);
      }
      const bool on_main = n.id == "stem.relu" || n.id == "head.proj.relu" || ends_with(n.id, ".module.relu") ||
                           (starts_with(n.id, "stage") && !branch && !contains(n.id, ".module") &&
                            !contains(n.id, "conv") && ends_with(n.id, ".relu"));
      if (!on_main) continue;
      push(time, shapes.at(n.id).width);
      push(freq, shapes.at(n.id).height);
    }
    CHECK(freq == freq_notes);
    const std::string_view name(id);
    if (name == "speech-resnet22") {
      CHECK(is_subsequence(time_notes, conv_time));
      CHECK(conv_time.back() == 1);
    } else if (name == "speech-bl-pyr22") {
      // The unbranched last stage adds its inner block boundary.
      CHECK(is_subsequence(time_notes, time));
      CHECK(time.size() == time_notes.size() + 1);
    } else {
      CHECK(time == time_notes);
    }
  }
}

TEST_CASE("speech heads end in a 512 projection and a 32k classifier") {
  const Graph g = build_preset("speech-resnet22");
  const auto& proj = *as_conv(g.node("head.proj.conv"));
  CHECK(proj.out_channels == 512);
  CHECK(proj.kernel_h == 4);
  CHECK(proj.kernel_w == 1);
  const ShapeMap shapes = infer_shapes(g, *declared_input_shape(g));
  CHECK(shapes.at(g.outputs().front()).channels == 32000);
}

TEST_CASE("shallower speech branches are cropped to the deepest branch before merging") {
  for (int beta : {2, 3}) {
    CAPTURE(beta);
    const Graph g = build_preset("speech-bl22", {.alpha = 4, .beta = beta});
    const ShapeMap shapes = infer_shapes(g, *declared_input_shape(g));
    int merges = 0;
    for (const auto& n : g.nodes()) {
      if (!ends_with(n.id, ".module.merge")) continue;
      ++merges;
      const std::string prefix = n.id.substr(0, n.id.size() - std::string(".merge").size());
      const std::string stage = n.id.substr(0, n.id.find('.'));
      const int big_convs = count_convs(g, stage + ".big.");
      const int little_convs = count_convs(g, stage + ".little.");
      CAPTURE(stage);
      // Only the branch with fewer convs carries a module-level crop.
      CHECK(g.index_of(prefix + ".b0.crop").has_value() == (little_convs < big_convs));
      CHECK_FALSE(g.index_of(prefix + ".b1.crop").has_value());
      for (const auto& p : n.preds) CHECK(shapes.at(p).width == shapes.at(n.id).width);
    }
    CHECK(merges >= 3);
  }
  // beta = 2: five big convs against three little convs in stages 1 to 3.
  const Graph g = build_preset("speech-bl22", {.alpha = 4, .beta = 2});
  for (int s = 1; s <= 3; ++s) {
    const std::string stage = "stage" + std::to_string(s);
    CHECK(count_convs(g, stage + ".big.") == 5);
    CHECK(count_convs(g, stage + ".little.") == 3);
  }
}

TEST_CASE("speech variants: unbranched last stage and pyramid branch counts") {
  const Graph unbranched = build_preset("speech-bl22", {.alpha = 2, .beta = 3});
  CHECK(unbranched.index_of("stage3.module.merge").has_value());
  CHECK_FALSE(unbranched.index_of("stage4.module.merge").has_value());

  const Graph pyr = build_preset("speech-bl-pyr22");
  const int64_t expected[] = {4, 3, 2};
  for (int s = 1; s <= 3; ++s) {
    const auto* m = std::get_if<AddMergeParams>(&pyr.node("stage" + std::to_string(s) + ".module.merge").spec);
    REQUIRE(m != nullptr);
    CHECK(m->arity == expected[s - 1]);
  }
  CHECK_FALSE(pyr.index_of("stage4.module.merge").has_value());
}

TEST_CASE("invalid configurations are rejected") {
  BLConfig c;
  c.alpha = 0;
  CHECK_THROWS_AS(check_config(c), Error);
  c = BLConfig{};
  c.coefficients = {1.0};
  CHECK_THROWS_AS(check_config(c), Error);
  c = BLConfig{};
  c.backbone = Backbone::SpeechResNet22;
  CHECK_THROWS_AS(build_bl_image(c), Error);
  CHECK_THROWS_AS(backbone_from_name("vgg16"), Error);
  CHECK(backbone_from_name("resnext101_64x4d") == Backbone::ResNeXt101_64x4d);
  CHECK_FALSE(speech_variant_from_name("bl99").has_value());
}
