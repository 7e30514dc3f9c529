#include "blnet/analyzer.hpp"

#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>

#include "blnet/error.hpp"
#include "blnet/shape_inference.hpp"

namespace blnet {

namespace {

struct Counter {
  std::span<const TensorShape> in;
  const TensorShape& out;

  LayerCost operator()(const Conv2dParams& p) const {
    const int64_t per_out = (p.in_channels / p.groups) * p.kernel_h * p.kernel_w;
    const int64_t weights = p.out_channels * per_out;
    return {out.height * out.width * p.out_channels * per_out, weights + (p.has_bias ? p.out_channels : 0)};
  }
  LayerCost operator()(const BatchNormParams& p) const { return {0, 2 * p.channels}; }
  LayerCost operator()(const LinearParams& p) const {
    return {p.in_features * p.out_features, p.in_features * p.out_features + (p.has_bias ? p.out_features : 0)};
  }
  template <typename T>
  LayerCost operator()(const T&) const {
    return {};
  }
};

std::set<std::string> excluded_nodes(const Graph& g) {
  std::set<std::string> out;
  std::stringstream list(g.meta("exclude_params"));
  std::string id;
  while (std::getline(list, id, ',')) {
    if (!id.empty()) out.insert(id);
  }
  return out;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

std::string CostConvention::describe() const {
  std::string s =
      "FLOPs = multiply-accumulates of Conv2d and Linear per sample; params = conv weights+bias, "
      "BatchNorm scale+shift, Linear weights+bias";
  if (honor_param_exclusions) s += "; params of nodes in 'exclude_params' metadata skipped";
  return s;
}

LayerCost count_node(const LayerSpec& spec, std::span<const TensorShape> in_shapes, const TensorShape& out,
                     const CostConvention&) {
  return std::visit(Counter{in_shapes, out}, spec);
}

CostReport count_graph(const Graph& graph, const TensorShape& input, const CostConvention& convention) {
  const ShapeMap shapes = infer_shapes(graph, input);
  const auto order = graph.topological_order();
  const auto excluded = convention.honor_param_exclusions ? excluded_nodes(graph) : std::set<std::string>{};

  CostReport r;
  r.graph_name = graph.meta("name", "graph");
  r.convention = convention.describe();
  r.input = input;
  std::vector<TensorShape> in;
  for (auto idx : *order) {
    const Node& n = graph.nodes()[idx];
    in.clear();
    if (n.kind() == LayerKind::Input) {
      in.push_back(input);
    } else {
      for (const auto& p : n.preds) in.push_back(shapes.at(p));
    }
    const TensorShape& out = shapes.at(n.id);
    LayerCost c = count_node(n.spec, in, out, convention);
    if (excluded.contains(n.id)) c.params = 0;

    r.nodes.push_back({n.id, std::string(kind_name(n.kind())), n.stage, out, c.flops, c.params});
    r.total_flops += c.flops;
    r.total_params += c.params;
    auto it = std::find_if(r.stages.begin(), r.stages.end(), [&](const StageCost& s) { return s.stage == n.stage; });
    if (it == r.stages.end()) it = r.stages.insert(r.stages.end(), StageCost{n.stage, 0, 0});
    it->flops += c.flops;
    it->params += c.params;
  }
  return r;
}

std::string CostReport::to_csv() const {
  std::ostringstream out;
  out << "node,kind,stage,output_shape,flops,params\n";
  for (const auto& n : nodes) {
    out << n.id << ',' << n.kind << ',' << n.stage << ',' << n.output.to_string() << ',' << n.flops << ','
        << n.params << '\n';
  }
  out << "TOTAL,,,," << total_flops << ',' << total_params << '\n';
  return out.str();
}

std::string CostReport::summary() const {
  std::ostringstream out;
  out << "# " << convention << "\n";
  out << graph_name << " @ " << input.to_string() << "\n";
  for (const auto& s : stages) {
    if (s.flops == 0 && s.params == 0) continue;
    out << "  " << s.stage << std::string(s.stage.size() < 10 ? 10 - s.stage.size() : 1, ' ')
        << fmt("%9.4f GFLOPs", s.flops / 1e9) << fmt("  %9.4f M params", s.params / 1e6) << "\n";
  }
  out << "  total     " << fmt("%9.4f GFLOPs", total_flops / 1e9) << fmt("  %9.4f M params", total_params / 1e6)
      << "\n";
  return out.str();
}

Comparison compare(const Graph& graph, const TensorShape& input, const Graph& baseline,
                   const TensorShape& baseline_input) {
  Comparison c;
  c.graph = count_graph(graph, input);
  c.baseline = count_graph(baseline, baseline_input);
  if (c.graph.total_flops <= 0) throw Error(ErrorKind::InvalidArgument, "graph has no counted FLOPs");
  c.speedup = static_cast<double>(c.baseline.total_flops) / static_cast<double>(c.graph.total_flops);

  auto delta = [&](const std::string& stage) -> StageDelta& {
    auto it = std::find_if(c.stages.begin(), c.stages.end(), [&](const StageDelta& d) { return d.stage == stage; });
    if (it == c.stages.end()) it = c.stages.insert(c.stages.end(), StageDelta{stage});
    return *it;
  };
  for (const auto& s : c.graph.stages) {
    delta(s.stage).flops = s.flops;
    delta(s.stage).params = s.params;
  }
  for (const auto& s : c.baseline.stages) {
    delta(s.stage).baseline_flops = s.flops;
    delta(s.stage).baseline_params = s.params;
  }
  return c;
}

Comparison compare(const Graph& graph, const Graph& baseline, const TensorShape& input) {
  return compare(graph, input, baseline, input);
}

std::string Comparison::summary() const {
  std::ostringstream out;
  out << graph.graph_name << " vs " << baseline.graph_name << "\n";
  out << "  stage         GFLOPs   baseline      delta\n";
  for (const auto& d : stages) {
    if (d.flops == 0 && d.baseline_flops == 0) continue;
    out << "  " << d.stage << std::string(d.stage.size() < 10 ? 10 - d.stage.size() : 1, ' ')
        << fmt("%9.4f", d.flops / 1e9) << fmt("  %9.4f", d.baseline_flops / 1e9)
        << fmt("  %+9.4f", (d.flops - d.baseline_flops) / 1e9) << "\n";
  }
  out << "  total     " << fmt("%9.4f", graph.total_flops / 1e9) << fmt("  %9.4f", baseline.total_flops / 1e9)
      << fmt("  %+9.4f", (graph.total_flops - baseline.total_flops) / 1e9) << "\n";
  out << "  params    " << fmt("%9.4f M", graph.total_params / 1e6) << fmt("  %9.4f M", baseline.total_params / 1e6)
      << "\n";
  out << fmt("  speedup   %.3fx\n", speedup);
  return out.str();
}

std::string Comparison::to_csv() const {
  std::ostringstream out;
  out << "stage,flops,baseline_flops,params,baseline_params\n";
  for (const auto& d : stages) {
    out << d.stage << ',' << d.flops << ',' << d.baseline_flops << ',' << d.params << ',' << d.baseline_params << '\n';
  }
  out << "TOTAL," << graph.total_flops << ',' << baseline.total_flops << ',' << graph.total_params << ','
      << baseline.total_params << '\n';
  out << "speedup," << fmt("%.6f", speedup) << ",,,\n";
  return out.str();
}

}  // namespace blnet
