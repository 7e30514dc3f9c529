#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "json.hpp"

#include "blnet/analyzer.hpp"
#include "blnet/builders.hpp"
#include "blnet/error.hpp"
#include "blnet/shape_inference.hpp"
#include "blnet/tables.hpp"

using namespace blnet;

namespace {

// Multiply counter: one tick per (output element, reduction tap) pair.
int64_t naive_conv_macs(const Conv2dParams& p, const TensorShape& in) {
  const int64_t oh = (in.height + 2 * p.pad_h - p.kernel_h) / p.stride_h + 1;
  const int64_t ow = (in.width + 2 * p.pad_w - p.kernel_w) / p.stride_w + 1;
  const int64_t cin_per_group = p.in_channels / p.groups;
  int64_t count = 0;
  for (int64_t oc = 0; oc < p.out_channels; ++oc)
    for (int64_t y = 0; y < oh; ++y)
      for (int64_t x = 0; x < ow; ++x)
        for (int64_t ic = 0; ic < cin_per_group; ++ic)
          for (int64_t ky = 0; ky < p.kernel_h; ++ky)
            for (int64_t kx = 0; kx < p.kernel_w; ++kx) ++count;
  return count;
}

int64_t naive_conv_params(const Conv2dParams& p) {
  int64_t count = 0;
  for (int64_t oc = 0; oc < p.out_channels; ++oc) {
    count += (p.in_channels / p.groups) * p.kernel_h * p.kernel_w;
    if (p.has_bias) ++count;
  }
  return count;
}

LayerCost cost_of(const LayerSpec& spec, const TensorShape& in) {
  const TensorShape ins[] = {in};
  const TensorShape out = infer_output_shape(spec, ins, "x");
  return count_node(spec, ins, out);
}

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

// Rebuilds g with an extra chain of convs hanging off `anchor`, exposed as a second output.
Graph with_side_branch(const Graph& g, const std::string& anchor, int64_t channels) {
  GraphBuilder b;
  for (const auto& [k, v] : g.metadata()) b.set_meta(k, v);
  for (const auto& n : g.nodes()) {
    b.set_stage(n.stage);
    b.add(n.id, n.spec, n.preds);
  }
  for (const auto& id : g.inputs()) b.mark_input(id);
  for (const auto& id : g.outputs()) b.mark_output(id);
  b.set_stage("aux");
  b.add("aux.conv1", Conv2dParams{channels, 16, 3, 3, 1, 1, 1, 1, 1, false}, {anchor});
  b.add("aux.bn1", BatchNormParams{16}, {"aux.conv1"});
  b.add("aux.conv2", Conv2dParams{16, 8, 1, 1, 2, 2, 0, 0, 1, true}, {"aux.bn1"});
  b.add("aux.gap", GlobalAvgPoolParams{}, {"aux.conv2"});
  b.add("aux.fc", LinearParams{8, 5, true}, {"aux.gap"});
  b.mark_output("aux.fc");
  return std::move(b).finish();
}

}  // namespace

TEST_CASE("count_node matches the closed-form examples") {
  const Conv2dParams stem{3, 64, 7, 7, 2, 2, 3, 3, 1, false};
  CHECK(cost_of(stem, {1, 3, 224, 224}).flops == 118'013'952);
  CHECK(naive_conv_macs(stem, {1, 3, 224, 224}) == 118'013'952);

  for (int64_t c : {1, 7, 64}) {
    CHECK(cost_of(Conv2dParams{c, c, 1, 1, 1, 1, 0, 0, 1, false}, {1, c, 1, 1}).flops == c * c);
  }

  const Conv2dParams dense{128, 128, 3, 3, 1, 1, 1, 1, 1, false};
  Conv2dParams grouped = dense;
  grouped.groups = 32;
  const TensorShape in{1, 128, 28, 28};
  CHECK(cost_of(dense, in).flops == 32 * cost_of(grouped, in).flops);
  CHECK(cost_of(dense, in).params == 32 * cost_of(grouped, in).params);

  // Batch size never enters the per-sample count.
  CHECK(cost_of(stem, {8, 3, 224, 224}).flops == cost_of(stem, {1, 3, 224, 224}).flops);
}

TEST_CASE("count_node agrees with the multiply counter on small random specs") {
  std::mt19937_64 rng(11);
  auto pick = [&](int64_t lo, int64_t hi) { return std::uniform_int_distribution<int64_t>(lo, hi)(rng); };
  int checked = 0;
  while (checked < 300) {
    const int64_t groups = pick(1, 3);
    Conv2dParams p{groups * pick(1, 4), groups * pick(1, 4), pick(1, 4), pick(1, 4), pick(1, 3), pick(1, 3),
                   pick(0, 2), pick(0, 2), groups, pick(0, 1) == 1};
    const TensorShape in{pick(1, 3), p.in_channels, pick(1, 8), pick(1, 8)};
    if (conv_out_extent(in.height, p.kernel_h, p.stride_h, p.pad_h) < 1 ||
        conv_out_extent(in.width, p.kernel_w, p.stride_w, p.pad_w) < 1 || p.pad_h >= p.kernel_h ||
        p.pad_w >= p.kernel_w) {
      continue;
    }
    const LayerCost c = cost_of(p, in);
    CHECK(c.flops == naive_conv_macs(p, in));
    CHECK(c.params == naive_conv_params(p));
    ++checked;
  }
}

TEST_CASE("only conv and linear nodes cost FLOPs; weights define params") {
  const TensorShape in{1, 6, 8, 8};
  CHECK(cost_of(BatchNormParams{6}, in).flops == 0);
  CHECK(cost_of(BatchNormParams{6}, in).params == 12);
  CHECK(cost_of(ReluParams{}, in).flops == 0);
  CHECK(cost_of(MaxPoolParams{3, 3, 2, 2, 1, 1}, in).flops == 0);
  CHECK(cost_of(GlobalAvgPoolParams{}, in).flops == 0);
  CHECK(cost_of(UpsampleParams{2, 2}, in).flops == 0);
  CHECK(cost_of(CropTimeParams{1, 2}, in).params == 0);
  const LayerCost fc = cost_of(LinearParams{384, 10, true}, in);
  CHECK(fc.flops == 3840);
  CHECK(fc.params == 3850);
  CHECK(cost_of(LinearParams{384, 10, false}, in).params == 3840);
}

TEST_CASE("reports are consistent and deterministic") {
  for (const char* id : {"resnet50", "bl-resnet50", "speech-bl22", "micro-bl"}) {
    CAPTURE(id);
    const Graph g = build_preset(id);
    const TensorShape input = *declared_input_shape(g);
    const CostReport r = count_graph(g, input);
    int64_t flops = 0, params = 0, stage_flops = 0, stage_params = 0;
    for (const auto& n : r.nodes) {
      flops += n.flops;
      params += n.params;
    }
    for (const auto& s : r.stages) {
      stage_flops += s.flops;
      stage_params += s.params;
    }
    CHECK(flops == r.total_flops);
    CHECK(stage_flops == r.total_flops);
    CHECK(stage_params == r.total_params);
    CHECK(params >= r.total_params);  // exclusions only remove
    CHECK(r.nodes.size() == g.size());
    CHECK(r.stages.front().stage == g.nodes().front().stage);
    const CostReport again = count_graph(g, input);
    CHECK(again.to_csv() == r.to_csv());
    CHECK(again.summary() == r.summary());
    CHECK(r.summary().find(r.convention) != std::string::npos);
  }
}

TEST_CASE("removing a subgraph removes exactly its subtotal") {
  for (const char* id : {"resnet50", "micro-bl"}) {
    CAPTURE(id);
    const Graph g = build_preset(id);
    const TensorShape input = *declared_input_shape(g);
    const std::string anchor = g.nodes()[g.size() / 2].id;
    const int64_t channels = infer_shapes(g, input).at(anchor).channels;
    const Graph bigger = with_side_branch(g, anchor, channels);
    const CostReport full = count_graph(bigger, input);
    const CostReport base = count_graph(g, input);
    int64_t aux_flops = 0, aux_params = 0;
    for (const auto& n : full.nodes) {
      if (n.stage == "aux") {
        aux_flops += n.flops;
        aux_params += n.params;
      }
    }
    CHECK(aux_flops > 0);
    CHECK(full.total_flops - base.total_flops == aux_flops);
    CHECK(full.total_params - base.total_params == aux_params);
  }
}

TEST_CASE("halving both input extents quarters conv FLOPs on padding-free graphs") {
  GraphBuilder b;
  b.add("input", InputParams{3}, {});
  b.add("c1", Conv2dParams{3, 16, 1, 1, 1, 1, 0, 0, 1, true}, {"input"});
  b.add("c2", Conv2dParams{16, 32, 2, 2, 2, 2, 0, 0, 1, false}, {"c1"});
  b.add("r", ReluParams{}, {"c2"});
  b.add("c3", Conv2dParams{32, 32, 4, 4, 4, 4, 0, 0, 4, false}, {"r"});
  b.add("c4", Conv2dParams{32, 8, 1, 1, 1, 1, 0, 0, 1, false}, {"c3"});
  b.mark_input("input");
  b.mark_output("c4");
  const Graph g = std::move(b).finish();
  for (int64_t size : {64, 128, 256}) {
    const CostReport full = count_graph(g, {1, 3, size, size});
    const CostReport half = count_graph(g, {1, 3, size / 2, size / 2});
    CHECK(full.total_flops == 4 * half.total_flops);
    CHECK(full.total_params == half.total_params);
  }
}

TEST_CASE("parameter counts do not depend on the input resolution") {
  for (const char* id : {"resnet50", "bl-resnet50", "bl-resnext50_32x4d"}) {
    CAPTURE(id);
    const Graph g = build_preset(id);
    const int64_t p224 = count_graph(g, {1, 3, 224, 224}).total_params;
    CHECK(count_graph(g, {1, 3, 256, 256}).total_params == p224);
    CHECK(count_graph(g, {1, 3, 320, 320}).total_params == p224);
  }
}

TEST_CASE("headline costs match the published tables") {
  const Graph r50 = build_preset("resnet50");
  const CostReport r = count_graph(r50, {1, 3, 224, 224});
  CHECK(rel(r.total_flops, 4.09e9) < 0.03);
  CHECK(rel(r.total_params, 25.55e6) < 0.01);

  const Comparison c152 = compare(build_preset("bl-resnet152"), build_preset("resnet152"), {1, 3, 224, 224});
  CHECK(rel(c152.graph.total_flops, 5.04e9) < 0.03);
  CHECK(rel(c152.baseline.total_flops, 11.51e9) < 0.03);
  CHECK(rel(c152.speedup, 2.28) < 0.03);

  const Comparison c101 = compare(build_preset("bl-resnet101"), build_preset("resnet101"), {1, 3, 224, 224});
  CHECK(rel(c101.speedup, 2.01) < 0.03);

  const Graph speech = build_preset("speech-resnet22");
  CHECK(rel(count_graph(speech, {1, 3, 64, 49}).total_flops, 1.11e9) < 0.10);
}

TEST_CASE("compare reports baseline over graph FLOPs") {
  const Graph g = build_preset("bl-resnet50");
  const Comparison self = compare(g, g, {1, 3, 224, 224});
  CHECK(self.speedup == 1.0);
  for (const auto& s : self.stages) CHECK(s.flops == s.baseline_flops);

  // The published 112 row halves every internal grid; feeding a 112 input
  // to the stock network quarters the cost instead.
  const Graph r50 = build_preset("resnet50");
  const Comparison low = compare(build_preset("resnet50_lowres"), r50, {1, 3, 224, 224});
  CHECK(rel(low.speedup, 3.17) < 0.03);
  const Comparison res = compare(r50, {1, 3, 112, 112}, r50, {1, 3, 224, 224});
  CHECK(res.speedup > low.speedup);
  CHECK(res.speedup < 4.0);
  CHECK(res.speedup == doctest::Approx(static_cast<double>(res.baseline.total_flops) / res.graph.total_flops));
  CHECK(res.graph.total_params == res.baseline.total_params);
  CHECK_FALSE(res.summary().empty());
  CHECK(res.to_csv().find("stage") != std::string::npos);
}

TEST_CASE("speech params leave out the classifier") {
  const Graph g = build_preset("speech-resnet22");
  const TensorShape input{1, 3, 64, 49};
  const CostReport honored = count_graph(g, input);
  const CostReport all = count_graph(g, input, CostConvention{.honor_param_exclusions = false});
  const auto classifier = std::find_if(all.nodes.begin(), all.nodes.end(),
                                       [](const NodeCost& n) { return n.id.rfind("head.classifier", 0) == 0; });
  REQUIRE(classifier != all.nodes.end());
  int64_t excluded = 0;
  for (const auto& n : all.nodes) {
    if (n.id.rfind("head.classifier", 0) == 0) excluded += n.params;
  }
  CHECK(excluded >= 512 * 32000);
  CHECK(all.total_params - honored.total_params == excluded);
  CHECK(all.total_flops == honored.total_flops);
}

TEST_CASE("reproduce_table reports per-cell errors") {
  CHECK(table_ids().size() == 7);
  CHECK_THROWS_AS(reproduce_table("t99"), Error);

  const TableResult t1 = reproduce_table("t1");
  CHECK(t1.passed());
  CHECK(t1.cells.size() >= 12);
  for (const auto& c : t1.cells) {
    CAPTURE(c.row);
    CHECK(c.rel_error == doctest::Approx(std::abs(c.computed - c.paper) / std::abs(c.paper)));
    CHECK(c.pass == (c.rel_error <= c.tolerance));
  }

  // A zero tolerance fails every gated cell that is not exact.
  const TableResult strict = reproduce_table("t1", 0.0);
  CHECK_FALSE(strict.passed());
  const TableResult loose = reproduce_table("t1", 0.5);
  CHECK(loose.passed());

  const auto doc = nlohmann::json::parse(t1.to_json());
  CHECK(doc["table"] == "t1");
  CHECK(doc["cells"].size() == t1.cells.size());
  CHECK(t1.to_csv().rfind("table,row,quantity,computed,paper", 0) == 0);
  CHECK(t1.to_text().find("PASS") != std::string::npos);
}

TEST_CASE("speech and ablation tables") {
  const TableResult t4 = reproduce_table("t4");
  CHECK(t4.passed());
  for (const auto& c : t4.cells) {
    if (c.quantity == "params_m") CHECK_FALSE(c.gated);
  }
  const TableResult t8 = reproduce_table("t8");
  for (const auto& c : t8.cells) {
    if (c.row.find("m=") != std::string::npos && c.gated) {
      CAPTURE(c.row);
      CHECK(c.pass);
    }
  }
  CHECK(reproduce_table("t10").passed());
  CHECK(reproduce_table("t7").passed());
}
