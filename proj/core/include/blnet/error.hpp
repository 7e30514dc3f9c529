#pragma once

#include <stdexcept>
#include <string>

namespace blnet {

enum class ErrorKind {
  ShapeMismatch,
  NonPositiveExtent,
  InvalidGraph,
  ParseError,
  UnknownLayerKind,
  UnknownBackbone,
  UnknownVariant,
  UnsupportedCombination,
  ShapeIrreconcilable,
  MissingParam,
  NonFiniteValue,
  StaleActivations,
  LabelOutOfRange,
  DivergenceDetected,
  InvalidArgument,
  Io,
};

const char* error_kind_name(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(error_kind_name(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace blnet

namespace blnet {

// Shape inference failure attributed to a node.
class ShapeError : public Error {
 public:
  ShapeError(ErrorKind kind, std::string node_id, const std::string& message)
      : Error(kind, "node '" + node_id + "': " + message), node_id_(std::move(node_id)) {}

  const std::string& node_id() const noexcept { return node_id_; }

 private:
  std::string node_id_;
};

}  // namespace blnet
