#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "blnet/graph.hpp"

namespace blnet {

inline constexpr int kGraphFormatVersion = 1;

// Line-oriented JSON document: header fields, then one node record per line.
//
//   {"format": "blnet-graph", "version": 1,
//    "metadata": {...},
//    "inputs": ["input"],
//    "outputs": ["fc"],
//    "nodes": [
//     {"id": "...", "kind": "Conv2d", "params": {...}, "preds": [...], "stage": "..."},
//     ...
//    ]}
std::string serialize(const Graph& graph);

// Throws Error{ParseError} (with line and column) or Error{UnknownLayerKind}.
Graph deserialize(std::string_view text);

void save_graph(const Graph& graph, const std::filesystem::path& path);
Graph load_graph(const std::filesystem::path& path);

}  // namespace blnet
