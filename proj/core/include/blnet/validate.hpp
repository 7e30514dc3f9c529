#pragma once

#include <string>
#include <vector>

#include "blnet/graph.hpp"

namespace blnet {

struct ValidationIssue {
  std::string node_id;  // empty for graph-level issues
  std::string message;
};

struct ValidationReport {
  std::vector<ValidationIssue> issues;

  bool ok() const { return issues.empty(); }
  std::string to_string() const;
};

// Checks every structural invariant of the graph and its layer specs and
// returns all violations. Never throws.
ValidationReport validate(const Graph& graph);

}  // namespace blnet
