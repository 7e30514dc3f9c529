#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "blnet/layer.hpp"

namespace blnet {

using Metadata = std::map<std::string, std::string>;

struct Node {
  std::string id;
  LayerSpec spec;
  std::vector<std::string> preds;
  // Stage label used for per-stage cost subtotals ("stem", "stage1", ...).
  std::string stage;

  LayerKind kind() const { return kind_of(spec); }
  bool operator==(const Node&) const = default;
};

// Immutable DAG of layer nodes. Construction does not validate; call validate()
// before analysis or execution.
class Graph {
 public:
  Graph() = default;
  Graph(std::vector<Node> nodes, std::vector<std::string> inputs, std::vector<std::string> outputs,
        Metadata metadata);

  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<std::string>& inputs() const { return inputs_; }
  const std::vector<std::string>& outputs() const { return outputs_; }
  const Metadata& metadata() const { return metadata_; }

  std::size_t size() const { return nodes_.size(); }
  std::optional<std::size_t> index_of(std::string_view id) const;
  const Node& node(std::string_view id) const;
  std::string meta(const std::string& key, const std::string& fallback = "") const;

  // Predecessor indices per node; unknown predecessor ids are skipped.
  std::vector<std::vector<std::size_t>> predecessor_indices() const;
  // Kahn order over node indices; empty optional if the graph has a cycle.
  std::optional<std::vector<std::size_t>> topological_order() const;

  // Structural equality: ids, specs, edges, stage labels, inputs, outputs and metadata.
  bool operator==(const Graph& other) const;

 private:
  std::vector<Node> nodes_;
  std::vector<std::string> inputs_;
  std::vector<std::string> outputs_;
  Metadata metadata_;
  std::unordered_map<std::string, std::size_t> index_;
};

class GraphBuilder {
 public:
  GraphBuilder() = default;

  void set_stage(std::string stage) { stage_ = std::move(stage); }
  const std::string& stage() const { return stage_; }
  void set_meta(const std::string& key, std::string value) { metadata_[key] = std::move(value); }

  std::string add(std::string id, LayerSpec spec, std::vector<std::string> preds);
  void mark_input(const std::string& id) { inputs_.push_back(id); }
  void mark_output(const std::string& id) { outputs_.push_back(id); }
  bool contains(const std::string& id) const { return ids_.contains(id); }

  Graph finish() &&;

 private:
  std::vector<Node> nodes_;
  std::vector<std::string> inputs_;
  std::vector<std::string> outputs_;
  Metadata metadata_;
  std::string stage_;
  std::unordered_map<std::string, std::size_t> ids_;
};

}  // namespace blnet
