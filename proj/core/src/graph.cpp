#include "blnet/graph.hpp"

#include <deque>

#include "blnet/error.hpp"

namespace blnet {

Graph::Graph(std::vector<Node> nodes, std::vector<std::string> inputs, std::vector<std::string> outputs,
             Metadata metadata)
    : nodes_(std::move(nodes)),
      inputs_(std::move(inputs)),
      outputs_(std::move(outputs)),
      metadata_(std::move(metadata)) {
  index_.reserve(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) index_.emplace(nodes_[i].id, i);
}

std::optional<std::size_t> Graph::index_of(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const Node& Graph::node(std::string_view id) const {
  auto idx = index_of(id);
  if (!idx) throw Error(ErrorKind::InvalidGraph, "no node with id '" + std::string(id) + "'");
  return nodes_[*idx];
}

std::string Graph::meta(const std::string& key, const std::string& fallback) const {
  auto it = metadata_.find(key);
  return it == metadata_.end() ? fallback : it->second;
}

std::vector<std::vector<std::size_t>> Graph::predecessor_indices() const {
  std::vector<std::vector<std::size_t>> preds(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    for (const auto& p : nodes_[i].preds) {
      if (auto idx = index_of(p)) preds[i].push_back(*idx);
    }
  }
  return preds;
}

std::optional<std::vector<std::size_t>> Graph::topological_order() const {
  const auto preds = predecessor_indices();
  std::vector<std::vector<std::size_t>> succs(nodes_.size());
  std::vector<std::size_t> indegree(nodes_.size(), 0);
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    indegree[i] = preds[i].size();
    for (auto p : preds[i]) succs[p].push_back(i);
  }
  std::deque<std::size_t> ready;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (indegree[i] == 0) ready.push_back(i);
  }
  std::vector<std::size_t> order;
  order.reserve(nodes_.size());
  while (!ready.empty()) {
    auto i = ready.front();
    ready.pop_front();
    order.push_back(i);
    for (auto s : succs[i]) {
      if (--indegree[s] == 0) ready.push_back(s);
    }
  }
  if (order.size() != nodes_.size()) return std::nullopt;
  return order;
}

bool Graph::operator==(const Graph& other) const {
  return nodes_ == other.nodes_ && inputs_ == other.inputs_ && outputs_ == other.outputs_ &&
         metadata_ == other.metadata_;
}

std::string GraphBuilder::add(std::string id, LayerSpec spec, std::vector<std::string> preds) {
  if (ids_.contains(id)) throw Error(ErrorKind::InvalidGraph, "duplicate node id '" + id + "'");
  for (const auto& p : preds) {
    if (!ids_.contains(p)) throw Error(ErrorKind::InvalidGraph, "node '" + id + "' uses unknown predecessor '" + p + "'");
  }
  ids_.emplace(id, nodes_.size());
  nodes_.push_back(Node{std::move(id), std::move(spec), std::move(preds), stage_});
  return nodes_.back().id;
}

Graph GraphBuilder::finish() && {
  return Graph(std::move(nodes_), std::move(inputs_), std::move(outputs_), std::move(metadata_));
}

}  // namespace blnet
