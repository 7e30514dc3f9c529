#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace blnet {

// One reproduced number next to its published value.
struct TableCell {
  std::string row;
  std::string quantity;  // "flops_g", "params_m", "speedup" or "ordering"
  double computed = 0.0;
  double paper = 0.0;
  double rel_error = 0.0;
  double tolerance = 0.0;
  bool gated = true;  // informational cells never fail a table
  bool pass = true;
};

struct TableResult {
  std::string id;
  std::string title;
  std::vector<TableCell> cells;

  bool passed() const;
  std::string to_text() const;
  std::string to_csv() const;
  std::string to_json() const;
};

std::vector<std::string> table_ids();

// Throws InvalidArgument for unknown ids. A tolerance override replaces the
// relative tolerance of every gated cell.
TableResult reproduce_table(std::string_view id, std::optional<double> tolerance_override = std::nullopt);

}  // namespace blnet
