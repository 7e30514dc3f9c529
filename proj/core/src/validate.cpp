#include "blnet/validate.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "blnet/error.hpp"
#include "blnet/shape_inference.hpp"

namespace blnet {

namespace {

struct SpecChecker {
  std::vector<std::string>& errors;

  void require(bool cond, const std::string& message) {
    if (!cond) errors.push_back(message);
  }

  void operator()(const InputParams& p) { require(p.channels >= 1, "input channels must be positive"); }

  void operator()(const Conv2dParams& p) {
    require(p.in_channels >= 1 && p.out_channels >= 1, "conv channels must be positive");
    require(p.kernel_h >= 1 && p.kernel_w >= 1, "conv kernel must be positive");
    require(p.stride_h >= 1 && p.stride_w >= 1, "conv stride must be positive");
    require(p.pad_h >= 0 && p.pad_w >= 0, "conv padding must be non-negative");
    require(p.groups >= 1, "conv groups must be positive");
    if (p.groups >= 1) {
      require(p.in_channels % p.groups == 0 && p.out_channels % p.groups == 0, "channels not divisible by groups");
    }
  }

  void operator()(const BatchNormParams& p) { require(p.channels >= 1, "batchnorm channels must be positive"); }
  void operator()(const ReluParams&) {}

  void operator()(const MaxPoolParams& p) {
    require(p.kernel_h >= 1 && p.kernel_w >= 1, "pool kernel must be positive");
    require(p.stride_h >= 1 && p.stride_w >= 1, "pool stride must be positive");
    require(p.pad_h >= 0 && p.pad_w >= 0 && p.pad_h < p.kernel_h && p.pad_w < p.kernel_w,
            "pool padding must be in [0, kernel)");
  }

  void operator()(const GlobalAvgPoolParams&) {}

  void operator()(const UpsampleParams& p) {
    require(p.scale_h >= 1 && p.scale_w >= 1, "upsample scale must be an integer >= 1");
  }

  void operator()(const AddMergeParams& p) {
    require(p.arity >= 1, "merge arity must be positive");
    require(static_cast<int64_t>(p.coefficients.size()) == p.arity, "coefficient count differs from arity");
  }

  void operator()(const ConcatMergeParams& p) { require(p.arity >= 1, "merge arity must be positive"); }

  void operator()(const CropTimeParams& p) {
    require(p.trim_front >= 0 && p.trim_back >= 0, "crop trims must be non-negative");
  }

  void operator()(const LinearParams& p) {
    require(p.in_features >= 1 && p.out_features >= 1, "linear features must be positive");
  }
};

}  // namespace

std::string ValidationReport::to_string() const {
  if (ok()) return "ok";
  std::ostringstream os;
  for (const auto& issue : issues) {
    os << (issue.node_id.empty() ? "<graph>" : issue.node_id) << ": " << issue.message << "\n";
  }
  return os.str();
}

ValidationReport validate(const Graph& graph) {
  ValidationReport report;
  auto add = [&](std::string id, std::string msg) { report.issues.push_back({std::move(id), std::move(msg)}); };

  if (graph.nodes().empty()) {
    add("", "no nodes");
    return report;
  }

  std::set<std::string> seen;
  for (const auto& node : graph.nodes()) {
    if (node.id.empty()) add("", "node with empty id");
    if (!seen.insert(node.id).second) add(node.id, "duplicate node id");
  }

  for (const auto& node : graph.nodes()) {
    std::vector<std::string> errors;
    std::visit(SpecChecker{errors}, node.spec);
    for (auto& e : errors) add(node.id, std::move(e));

    const auto arity = expected_arity(node.spec);
    if (static_cast<int64_t>(node.preds.size()) != arity) {
      add(node.id, "expects " + std::to_string(arity) + " predecessor(s), has " + std::to_string(node.preds.size()));
    }
    for (const auto& p : node.preds) {
      if (!graph.index_of(p)) add(node.id, "unknown predecessor '" + p + "'");
    }
  }

  if (!graph.topological_order()) add("", "graph contains a cycle");

  if (graph.inputs().size() != 1) {
    add("", "expected exactly one external input, found " + std::to_string(graph.inputs().size()));
  }
  for (const auto& in : graph.inputs()) {
    auto idx = graph.index_of(in);
    if (!idx) {
      add(in, "declared input does not exist");
    } else if (graph.nodes()[*idx].kind() != LayerKind::Input) {
      add(in, "declared input is not an Input node");
    }
  }
  for (const auto& node : graph.nodes()) {
    if (node.kind() == LayerKind::Input &&
        std::find(graph.inputs().begin(), graph.inputs().end(), node.id) == graph.inputs().end()) {
      add(node.id, "Input node not listed among graph inputs");
    }
  }
  if (graph.outputs().empty()) add("", "graph declares no outputs");
  for (const auto& out : graph.outputs()) {
    if (!graph.index_of(out)) add(out, "declared output does not exist");
  }

  // Shape-dependent invariants need a concrete input; use the declared one.
  if (report.ok()) {
    if (auto shape = declared_input_shape(graph)) {
      try {
        (void)infer_shapes(graph, *shape);
      } catch (const ShapeError& e) {
        add(e.node_id(), e.what());
      } catch (const Error& e) {
        add("", e.what());
      }
    }
  }
  return report;
}

}  // namespace blnet
